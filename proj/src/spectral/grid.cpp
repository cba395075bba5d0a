#include <algorithm>
#include <cmath>
#include <set>

#include "caad/errors.hpp"
#include "caad/rng.hpp"
#include "caad/spectral.hpp"

namespace caad::spectral {

std::string_view split_name(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

void GridSpec::validate() const {
  require(n_freq_bins >= 1 && n_bw_bins >= 1, Errc::ConfigError, "grid needs at least one bin per axis");
  require(freq_max_hz > freq_min_hz, Errc::ConfigError, "freq range is degenerate");
  require(bw_max_hz > bw_min_hz, Errc::ConfigError, "bandwidth range is degenerate");
  require(window_s > 0, Errc::ConfigError, "window_s must be positive");
}

std::optional<Index> GridSpec::bin_of(double v, double lo, double hi, Index n) {
  if (!(v >= lo) || !(v <= hi)) return std::nullopt;
  if (v == hi) return n - 1;
  const auto b = static_cast<Index>(std::floor((v - lo) / (hi - lo) * static_cast<double>(n)));
  return std::clamp<Index>(b, 0, n - 1);
}

double GridSpec::freq_center(Index row) const {
  return freq_min_hz + (static_cast<double>(row) + 0.5) * (freq_max_hz - freq_min_hz) / static_cast<double>(n_freq_bins);
}

double GridSpec::bw_center(Index col) const {
  return bw_min_hz + (static_cast<double>(col) + 0.5) * (bw_max_hz - bw_min_hz) / static_cast<double>(n_bw_bins);
}

BinResult bin_emissions(std::span<const EmissionRecord> records, const GridSpec& spec, double t_origin,
                        std::optional<std::size_t> n_windows) {
  spec.validate();
  BinResult out;
  std::size_t count = 0;
  if (n_windows) {
    count = *n_windows;
  } else if (!records.empty()) {
    count = static_cast<std::size_t>(std::floor((records.back().ts - t_origin) / spec.window_s)) + 1;
  }
  out.grids.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.grids[i].values = Grid::Zero(spec.n_freq_bins, spec.n_bw_bins);
    out.grids[i].t_start = t_origin + static_cast<double>(i) * spec.window_s;
  }
  for (const auto& r : records) {
    const double w = std::floor((r.ts - t_origin) / spec.window_s);
    const auto row = GridSpec::bin_of(r.center_freq_hz, spec.freq_min_hz, spec.freq_max_hz, spec.n_freq_bins);
    const auto col = GridSpec::bin_of(r.bandwidth_hz, spec.bw_min_hz, spec.bw_max_hz, spec.n_bw_bins);
    if (w < 0 || w >= static_cast<double>(count) || !row || !col) {
      ++out.out_of_range;
      continue;
    }
    out.grids[static_cast<std::size_t>(w)].values(*row, *col) += 1.0f;
  }
  return out;
}

NormStats fit_norm_stats(std::span<const DensityGrid> train) {
  require(!train.empty(), Errc::EmptyInput, "normalization statistics need training grids");
  double lo = train.front().values.minCoeff(), hi = train.front().values.maxCoeff();
  for (const auto& g : train) {
    lo = std::min(lo, static_cast<double>(g.values.minCoeff()));
    hi = std::max(hi, static_cast<double>(g.values.maxCoeff()));
  }
  if (!(hi > lo)) raise(Errc::DegenerateStats, "train grids have global max == global min (" + std::to_string(hi) + ")");
  return {lo, hi};
}

void normalize_grids(std::span<DensityGrid> grids, const NormStats& stats) {
  const double range = stats.global_max - stats.global_min;
  if (!(range > 0)) raise(Errc::DegenerateStats, "normalization range is empty");
  for (auto& g : grids) {
    g.values = ((g.values.cast<double>().array() - stats.global_min) / range).min(1.0).max(0.0).cast<float>().matrix();
  }
}

Grid denormalize(const Grid& g, const NormStats& stats) {
  return (g.cast<double>().array() * (stats.global_max - stats.global_min) + stats.global_min).cast<float>().matrix();
}

DenoiseMask fit_denoise_mask(std::span<const DensityGrid> train, double p_thresh) {
  require(!train.empty(), Errc::EmptyInput, "denoise mask needs training grids");
  const Index rows = train.front().values.rows(), cols = train.front().values.cols();
  Eigen::ArrayXXd nonzero = Eigen::ArrayXXd::Zero(rows, cols);
  for (const auto& g : train) {
    require(g.values.rows() == rows && g.values.cols() == cols, Errc::ShapeError, "train grids differ in shape");
    nonzero += (g.values.array() > 0.0f).cast<double>();
  }
  DenoiseMask mask;
  mask.nonzero_prob = nonzero / static_cast<double>(train.size());
  mask.p_thresh = p_thresh;
  mask.keep = Mask(rows, cols);
  // Counts compared as integers so probability == threshold survives exactly.
  const double needed = p_thresh * static_cast<double>(train.size());
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) mask.keep(r, c) = nonzero(r, c) >= needed - 1e-9 * std::max(1.0, needed);
  return mask;
}

std::size_t apply_mask(std::span<DensityGrid> grids, const DenoiseMask& mask, MaskMode mode) {
  std::size_t touched = 0;
  for (auto& g : grids) {
    require(g.values.rows() == mask.keep.rows() && g.values.cols() == mask.keep.cols(), Errc::ShapeError,
            "grid and mask differ in shape");
    const bool hit = ((g.values.array() != 0.0f) && !mask.keep).any();
    if (!hit) continue;
    ++touched;
    if (mode == MaskMode::ZeroOut) {
      g.values = mask.keep.select(g.values.array(), 0.0f).matrix();
    } else {
      g.label = Label::Anomaly;
      if (g.kind == "benign") g.kind = "natural";
    }
  }
  return touched;
}

std::vector<HopperSignature> make_hopper_library(const DenoiseMask& mask, std::size_t count, std::size_t pixels,
                                                 std::uint64_t seed) {
  std::vector<std::pair<Index, Index>> quiet;
  for (Index r = 0; r < mask.keep.rows(); ++r)
    for (Index c = 0; c < mask.keep.cols(); ++c)
      if (!mask.keep(r, c)) quiet.emplace_back(r, c);
  require(quiet.size() >= pixels, Errc::ConfigError,
          "only " + std::to_string(quiet.size()) + " masked cells; a signature needs " + std::to_string(pixels));
  Rng rng = derive_rng(seed, 0x4077);
  std::vector<HopperSignature> library(count);
  for (auto& sig : library) {
    auto cells = quiet;
    // Partial Fisher-Yates: the first `pixels` entries are a uniform draw without replacement.
    for (std::size_t i = 0; i < pixels; ++i) {
      const auto j = i + uniform_index(rng, cells.size() - i);
      std::swap(cells[i], cells[j]);
    }
    sig.pixels.assign(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(pixels));
  }
  return library;
}

DensityGrid inject_hopper(const DensityGrid& grid, const HopperSignature& signature, const NormStats& stats) {
  DensityGrid out = grid;
  if (signature.pixels.empty()) return out;
  const auto amp = static_cast<float>(stats.amplitude());
  for (const auto& [r, c] : signature.pixels) {
    require(r >= 0 && r < out.values.rows() && c >= 0 && c < out.values.cols(), Errc::ShapeError,
            "signature pixel outside grid");
    out.values(r, c) = std::min(1.0f, out.values(r, c) + amp);
  }
  out.label = Label::Anomaly;
  out.kind = "hopper";
  return out;
}

std::vector<std::pair<Index, Index>> region_from_records(std::span<const EmissionRecord> records, const GridSpec& spec) {
  std::set<std::pair<Index, Index>> cells;
  for (const auto& r : records) {
    const auto row = GridSpec::bin_of(r.center_freq_hz, spec.freq_min_hz, spec.freq_max_hz, spec.n_freq_bins);
    const auto col = GridSpec::bin_of(r.bandwidth_hz, spec.bw_min_hz, spec.bw_max_hz, spec.n_bw_bins);
    if (row && col) cells.emplace(*row, *col);
  }
  return {cells.begin(), cells.end()};
}

std::size_t inject_drop(std::span<DensityGrid> grids, double t_drop, std::span<const std::pair<Index, Index>> region) {
  if (region.empty()) {
    warn("NoOpRegion: drop region is empty; grids left unchanged");
    return 0;
  }
  std::size_t touched = 0;
  for (auto& g : grids) {
    if (g.t_start < t_drop) continue;
    for (const auto& [r, c] : region) g.values(r, c) = 0.0f;
    g.label = Label::Anomaly;
    g.kind = "drop";
    ++touched;
  }
  return touched;
}

nn::Tensor<float> stack(std::span<const DensityGrid> grids) {
  std::vector<const DensityGrid*> ptrs;
  for (const auto& g : grids) ptrs.push_back(&g);
  return stack(std::span<const DensityGrid* const>(ptrs));
}

nn::Tensor<float> stack(std::span<const DensityGrid* const> grids) {
  require(!grids.empty(), Errc::EmptyBatch, "cannot stack zero grids");
  const Index h = grids.front()->values.rows(), w = grids.front()->values.cols();
  nn::Tensor<float> out(nn::Shape{static_cast<Index>(grids.size()), 1, h, w});
  for (std::size_t i = 0; i < grids.size(); ++i) {
    require(grids[i]->values.rows() == h && grids[i]->values.cols() == w, Errc::ShapeError, "grids differ in shape");
    std::copy_n(grids[i]->values.data(), h * w, out.data() + static_cast<Index>(i) * h * w);
  }
  return out;
}

}  // namespace caad::spectral
