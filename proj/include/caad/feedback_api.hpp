#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "caad/pipeline.hpp"

namespace httplib {
class Server;
}

namespace caad::feedback {

enum class Phase { Idle, Inferring, AwaitingLabels, Retraining, Done };
std::string_view phase_name(Phase p) noexcept;

struct FeedbackRecord {
  std::string instance_id;
  int label = 0;
  std::string source = "human";  // human | oracle
  double ts = 0;                 // unix seconds
  std::string session_id;
};

nlohmann::json to_json(const FeedbackRecord& r);
FeedbackRecord feedback_from_json(const nlohmann::json& j);

/// Append-only JSONL audit log. The effective label of an id is its newest entry.
class LabelLog {
 public:
  explicit LabelLog(std::filesystem::path path);

  void append(const FeedbackRecord& r);
  const std::vector<FeedbackRecord>& entries() const noexcept { return entries_; }
  std::map<std::string, int> effective() const;
  static std::map<std::string, int> replay(std::span<const FeedbackRecord> entries);

 private:
  std::filesystem::path path_;
  std::vector<FeedbackRecord> entries_;
};

struct ServiceConfig {
  std::filesystem::path state_dir;
  double h_percent = 5;
  int retrain_epochs = 7;
  pipeline::InferenceConfig inference;
  std::string session_id = "session-0";
};

struct Artifacts {
  trainer::Checkpoint checkpoint;
  spectral::DatasetBundle data;
  std::optional<pipeline::Calibration> calibration;  // fitted on start when absent
};

/// Transport-independent session. Every mutating call persists before it returns,
/// and a new instance over the same state_dir resumes where the old one stopped.
class Service {
 public:
  Service(Artifacts artifacts, ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  nlohmann::json status() const;
  /// idle -> inferring -> awaiting_labels on the background worker.
  nlohmann::json start_inference();
  nlohmann::json uncertain(double h_percent) const;
  nlohmann::json grid(const std::string& id) const;
  nlohmann::json submit_label(const std::string& id, int label, const std::string& source = "human");
  /// Labels every HIL id from the dataset's ground truth.
  nlohmann::json oracle_label();
  nlohmann::json trigger_retrain(bool override_empty);
  nlohmann::json before_after() const;
  nlohmann::json boxplot() const;
  std::vector<FeedbackRecord> audit() const;

  /// Blocks until the background job, if any, has finished.
  void wait() const;

 private:
  void resume();
  void launch(Phase running, std::function<void()> job);
  void run_inference();
  void run_retrain();
  const spectral::DensityGrid& find_grid(const std::string& id) const;
  void require_phase(Phase p, const char* action) const;

  Artifacts art_;
  ServiceConfig cfg_;
  mutable std::mutex mu_;
  Phase phase_ = Phase::Idle;
  std::string error_;
  std::vector<uq::UncertaintyRecord> before_, after_;
  std::vector<std::string> hil_ids_;
  std::optional<LabelLog> log_;
  std::optional<trainer::Checkpoint> retrained_;
  nlohmann::json result_;  // before/after report once done
  std::thread worker_;
  std::atomic<bool> busy_{false};
};

/// Registers every endpoint on `server`; errors map to 400/403/404/409/500 with a JSON body.
void mount(httplib::Server& server, Service& service);

/// Blocking HTTP loop.
void serve(Service& service, const std::string& host, int port);

}  // namespace caad::feedback
