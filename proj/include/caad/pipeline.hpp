#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "caad/detector.hpp"
#include "caad/evalkit.hpp"
#include "caad/trainer.hpp"
#include "caad/uq.hpp"

namespace caad::pipeline {

struct InferenceConfig {
  int mc_samples = 10;
  std::size_t centroids = 1;  // m
  double phi = 0.99;
  detector::CentroidAgg agg = detector::CentroidAgg::Max;
  int batch_size = 128;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const InferenceConfig& c);
/// Overlays the keys of j on `base`; unknown keys and wrong types are ConfigError.
InferenceConfig inference_config_from_json(const nlohmann::json& j, InferenceConfig base = {});

/// Critic embeddings of the grids, one unit row each; no graph is recorded.
Eigen::MatrixXd embed(Critic<float>& critic, std::span<const spectral::Grid> grids, bool dropout_active, int batch_size = 128);
Eigen::MatrixXd embed(Critic<float>& critic, std::span<const spectral::DensityGrid> grids, bool dropout_active,
                      int batch_size = 128);

/// k dropout passes with masks drawn from `seed`; k < 2 is ConfigError.
uq::MCEmbeddingSet mc_embed(Critic<float>& critic, std::span<const spectral::DensityGrid> grids, int k, std::uint64_t seed,
                            int batch_size = 128);

struct Calibration {
  detector::CentroidBank bank;
  detector::ThresholdCalibration threshold;
  bool mc = true;  // theta fitted on pooled per-sample MC scores
  int k = 10;
  std::string checkpoint_id;
};

/// Centroids from the train split, theta from the benign validation split.
/// With no_uq the deterministic pass is used for both calibration and inference.
Calibration calibrate(trainer::Model& model, const spectral::DatasetBundle& data, const InferenceConfig& cfg, bool no_uq);

/// One record per grid: votes over k MC passes, score of the renormalized mean embedding.
std::vector<uq::UncertaintyRecord> infer(trainer::Model& model, std::span<const spectral::DensityGrid> grids,
                                         const Calibration& cal, const InferenceConfig& cfg, bool no_uq);

/// Metrics of records against the grids' labels, optionally leaving some ids out.
evalkit::MetricsReport evaluate(std::span<const uq::UncertaintyRecord> records, std::span<const spectral::DensityGrid> grids,
                                const std::set<std::string>& exclude = {});

/// Convenience: calibrate + infer + evaluate on the test split.
struct Evaluation {
  Calibration calibration;
  std::vector<uq::UncertaintyRecord> records;
  evalkit::MetricsReport metrics;
};
Evaluation run_evaluation(const trainer::Checkpoint& ckpt, const spectral::DatasetBundle& data, const InferenceConfig& cfg);

nlohmann::json to_json(const Calibration& cal);
Calibration calibration_from_json(const nlohmann::json& j);
void save_calibration(const std::filesystem::path& path, const Calibration& cal);
Calibration load_calibration(const std::filesystem::path& path);

nlohmann::json to_json(const uq::UncertaintyRecord& r);
uq::UncertaintyRecord record_from_json(const nlohmann::json& j);
void write_records(const std::filesystem::path& path, std::span<const uq::UncertaintyRecord> records);
std::vector<uq::UncertaintyRecord> read_records(const std::filesystem::path& path);

/// Effective ground-truth label (0/1) per grid id.
std::map<std::string, int> truth_labels(std::span<const spectral::DensityGrid> grids);

}  // namespace caad::pipeline
