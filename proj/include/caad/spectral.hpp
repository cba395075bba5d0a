#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "caad/nn/tensor.hpp"

namespace caad::spectral {

using nn::Index;
using Grid = nn::RowMatrix<float>;  // rows = frequency bins (y), cols = bandwidth bins (x)
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Label : int { Unlabeled = -1, Benign = 0, Anomaly = 1 };
enum class Split { Train, Val, Test };

std::string_view split_name(Split s) noexcept;

// ---------------------------------------------------------------- emissions

struct EmissionRecord {
  double ts = 0;
  double center_freq_hz = 0;
  double bandwidth_hz = 0;
  std::optional<double> power_db;
  std::optional<std::string> signal_type;
};

struct ParseResult {
  std::vector<EmissionRecord> records;
  std::size_t skipped = 0;
  std::vector<std::string> diagnostics;  // first few malformed lines
};

/// Newline-delimited JSON; unknown fields are ignored, blank lines skipped.
ParseResult parse_emissions(std::istream& in);
ParseResult parse_emissions(std::string_view text);
void write_emissions(std::ostream& out, std::span<const EmissionRecord> records);

// ------------------------------------------------------------------ binning

struct GridSpec {
  Index n_freq_bins = 80;
  Index n_bw_bins = 80;
  double freq_min_hz = 902e6;
  double freq_max_hz = 928e6;
  double bw_min_hz = 0;
  double bw_max_hz = 2e6;
  double window_s = 180;

  void validate() const;
  /// Half-open bin of v in [lo, hi) split n ways, hi itself in the last bin; nullopt outside.
  static std::optional<Index> bin_of(double v, double lo, double hi, Index n);
  double freq_center(Index row) const;
  double bw_center(Index col) const;
};

struct DensityGrid {
  std::string id;
  Grid values;
  double t_start = 0;
  Label label = Label::Unlabeled;
  Split split = Split::Train;
  std::string kind = "benign";  // benign | hopper | drop | natural
};

struct BinResult {
  std::vector<DensityGrid> grids;
  std::size_t out_of_range = 0;
};

/// One grid per window [t_origin + i*window_s, ...). Records are expected sorted by ts;
/// by default windows cover through the last record.
BinResult bin_emissions(std::span<const EmissionRecord> records, const GridSpec& spec, double t_origin = 0,
                        std::optional<std::size_t> n_windows = std::nullopt);

// ------------------------------------------------------------ normalization

struct NormStats {
  double global_min = 0;
  double global_max = 1;
  double amplitude() const { return 1.0 / (global_max - global_min); }
};

NormStats fit_norm_stats(std::span<const DensityGrid> train);
/// (v - min) / (max - min), clipped to [0,1].
void normalize_grids(std::span<DensityGrid> grids, const NormStats& stats);
Grid denormalize(const Grid& g, const NormStats& stats);

// ---------------------------------------------------------------- denoising

struct DenoiseMask {
  Mask keep;
  Eigen::ArrayXXd nonzero_prob;
  double p_thresh = 0.0005;
  Index masked_count() const { return keep.size() - keep.count(); }
};

DenoiseMask fit_denoise_mask(std::span<const DensityGrid> train, double p_thresh);

enum class MaskMode { ZeroOut, LabelAnomaly };
/// Returns how many grids were touched (zeroed or relabeled).
std::size_t apply_mask(std::span<DensityGrid> grids, const DenoiseMask& mask, MaskMode mode);

// --------------------------------------------------------------- injection

struct HopperSignature {
  std::vector<std::pair<Index, Index>> pixels;  // (freq_bin, bw_bin)
};

/// count signatures of `pixels` distinct cells each, drawn uniformly from masked cells.
std::vector<HopperSignature> make_hopper_library(const DenoiseMask& mask, std::size_t count, std::size_t pixels,
                                                 std::uint64_t seed);

/// Adds the normalized image of a raw count of 1 to each signature cell.
DensityGrid inject_hopper(const DensityGrid& grid, const HopperSignature& signature, const NormStats& stats);

/// Cells hit by the given records.
std::vector<std::pair<Index, Index>> region_from_records(std::span<const EmissionRecord> records, const GridSpec& spec);

/// Zeroes the region in grids starting at or after t_drop and labels them anomalous.
std::size_t inject_drop(std::span<DensityGrid> grids, double t_drop, std::span<const std::pair<Index, Index>> region);

// ---------------------------------------------------------------- synthesis

struct Emitter {
  std::string name;
  double center_freq_hz = 915e6;
  double bandwidth_hz = 5e5;
  double packet_rate_hz = 1;
  double freq_jitter_hz = 0;
  double bw_jitter_hz = 0;
  double start_s = 0;
  double end_s = 1e300;
  double emit_prob = 1;  // independent per scheduled packet
  double duty_period_s = 0;  // 0 = always on
  double duty_on_fraction = 1;
  double duty_phase_s = 0;
};

struct HopperEvent {
  double t = 0;
  std::size_t signature_id = 0;
};

struct DropEvent {
  double t = 0;
  std::size_t emitter_id = 0;
};

struct SynthScenario {
  std::vector<Emitter> emitters;
  std::vector<HopperEvent> hopper_events;
  /// (freq_hz, bw_hz) per packet for each signature used by hopper_events.
  std::vector<std::vector<std::pair<double, double>>> hopper_library_hz;
  std::vector<DropEvent> drop_events;
  double duration_s = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Deterministic record stream sorted by ts (stable on ties).
std::vector<EmissionRecord> synth_generate(const SynthScenario& scenario);

/// Busy ISM-like band whose strongest cell sees about 98 packets per window.
SynthScenario desk_scenario(const GridSpec& spec, std::size_t n_windows, std::uint64_t seed);

// ------------------------------------------------------------------ dataset

struct InjectionPlan {
  /// Every clean test window also appears with a hopper signature added.
  bool hopper_twins = true;
  std::size_t library_size = 10;
  std::size_t pixels_per_signature = 6;
  std::optional<double> drop_t;
  std::string drop_emitter;  // signal_type of the emitter that goes silent
  std::uint64_t seed = 0;
};

struct WindowRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct AssembleOptions {
  WindowRange train, val, test;
  double p_thresh = 0.0005;
  InjectionPlan injection;
  std::uint64_t seed = 0;
};

struct DatasetBundle {
  GridSpec spec;
  NormStats stats;
  DenoiseMask mask;
  std::vector<HopperSignature> hopper_library;
  std::vector<DensityGrid> train, val, test;
  std::uint64_t seed = 0;
  std::string source = "synthetic";
  std::size_t out_of_range = 0;

  std::vector<DensityGrid>& split(Split s);
  const std::vector<DensityGrid>& split(Split s) const;
  Index rows() const;
  Index cols() const;
};

/// Sequential windows: train → val → test. Overlapping or out-of-order ranges are SplitOverlap.
DatasetBundle assemble_dataset(std::span<const EmissionRecord> records, const GridSpec& spec,
                               const AssembleOptions& options);

/// manifest.json + {split}.f32 + {split}.labels.json.
void save_bundle(const std::filesystem::path& dir, const DatasetBundle& bundle);
DatasetBundle load_bundle(const std::filesystem::path& dir);
nlohmann::json bundle_manifest(const DatasetBundle& bundle);
/// Stable digest of grid bytes and labels, recorded in checkpoints.
std::string bundle_hash(const DatasetBundle& bundle);

/// Stacks grids as a [N,1,H,W] float tensor.
nn::Tensor<float> stack(std::span<const DensityGrid> grids);
nn::Tensor<float> stack(std::span<const DensityGrid* const> grids);

}  // namespace caad::spectral
