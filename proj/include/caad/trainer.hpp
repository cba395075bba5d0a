#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "caad/errors.hpp"
#include "caad/nets.hpp"
#include "caad/objectives.hpp"
#include "caad/spectral.hpp"
#include "caad/transforms.hpp"

namespace caad::trainer {

struct Ablation {
  bool no_cl = false;
  bool no_uq = false;
  bool no_unet = false;
  bool no_wgan_gp = false;

  bool any() const noexcept { return no_cl || no_uq || no_unet || no_wgan_gp; }
  std::string label() const;  // "full" or "no_cl+no_uq" style
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double lr = 1e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.9;
  int critic_steps_per_gen_step = 5;
  objectives::LossConfig loss;
  Ablation ablation;
  GeneratorSpec generator;
  CriticSpec critic;
  transforms::NegativeTransformConfig transform;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RetrainConfig : TrainConfig {
  RetrainConfig() { epochs = 7; }
  explicit RetrainConfig(const TrainConfig& base, int retrain_epochs = 7, double h = 5)
      : TrainConfig(base), h_percent(h) {
    epochs = retrain_epochs;
  }
  double h_percent = 5;

  void validate() const;
};

/// Flags folded into the config: no_cl zeroes alpha, no_unet drops skip connections.
/// no_uq and no_wgan_gp are read by inference and the critic update respectively.
TrainConfig ablate(TrainConfig cfg, const Ablation& flags);

struct EpochLosses {
  int epoch = 0;
  long steps = 0;
  double critic = 0;
  double wasserstein = 0;
  double penalty = 0;
  double supcon = 0;
  double hil = 0;
  double generator = 0;
};

using StateDict = std::vector<std::pair<std::string, nn::Tensor<float>>>;

struct Checkpoint {
  std::string id;
  std::string parent_id;  // empty for a fresh training run
  TrainConfig config;
  StateDict state;  // "generator.*", "critic.*"
  int epoch = 0;
  std::vector<EpochLosses> history;
  std::string data_hash;
  std::size_t feedback_count = 0;
};

/// Live networks built from a checkpoint's config and state.
struct Model {
  Model(const TrainConfig& cfg, std::uint64_t seed);
  Generator<float> generator;
  Critic<float> critic;
};

std::unique_ptr<Model> load_model(const Checkpoint& ckpt);
StateDict export_model(Model& model);

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Raised with code AbortNaN; carries the state at the end of the last finite epoch.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, Checkpoint last_good)
      : Error(Errc::AbortNaN, what), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const noexcept { return last_good_; }

 private:
  Checkpoint last_good_;
};

struct FeedbackSets {
  std::vector<spectral::Grid> benign;   // X^HIL_ben
  std::vector<spectral::Grid> anomaly;  // X^HIL_anom
  bool empty() const noexcept { return benign.empty() && anomaly.empty(); }
};

struct RunOptions {
  /// Called after every finished epoch.
  std::function<void(const EpochLosses&)> on_epoch;
  /// When set, the checkpoint is rewritten here after every finite epoch.
  std::optional<std::filesystem::path> checkpoint_dir;
};

Checkpoint train_caad(const spectral::DatasetBundle& data, const TrainConfig& cfg, const RunOptions& opts = {});

Checkpoint retrain_caad_ef(const Checkpoint& ckpt, const spectral::DatasetBundle& data, const FeedbackSets& feedback,
                           const RetrainConfig& cfg, const RunOptions& opts = {});

nlohmann::json to_json(const TrainConfig& cfg);
/// Fields absent from j keep the values of `base`; unknown keys are ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

}  // namespace caad::trainer
