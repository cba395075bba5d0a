#include "caad/feedback_api.hpp"

#include <chrono>
#include <fstream>

#include <httplib.h>

#include "caad/errors.hpp"

namespace caad::feedback {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view phase_name(Phase p) noexcept {
  switch (p) {
    case Phase::Idle: return "idle";
    case Phase::Inferring: return "inferring";
    case Phase::AwaitingLabels: return "awaiting_labels";
    case Phase::Retraining: return "retraining";
    case Phase::Done: return "done";
  }
  return "unknown";
}

json to_json(const FeedbackRecord& r) {
  return {{"instance_id", r.instance_id}, {"label", r.label}, {"source", r.source}, {"ts", r.ts},
          {"session_id", r.session_id}};
}

FeedbackRecord feedback_from_json(const json& j) {
  FeedbackRecord r;
  try {
    r.instance_id = j.at("instance_id").get<std::string>();
    r.label = j.at("label").get<int>();
    r.source = j.value("source", std::string("human"));
    r.ts = j.value("ts", 0.0);
    r.session_id = j.value("session_id", std::string());
  } catch (const json::exception& e) {
    raise(Errc::ConfigError, std::string("feedback record: ") + e.what());
  }
  require(r.label == 0 || r.label == 1, Errc::ConfigError, "label must be 0 (benign) or 1 (anomaly)");
  require(r.source == "human" || r.source == "oracle", Errc::ConfigError, "source must be human or oracle");
  return r;
}

// ---------------------------------------------------------------- label log

LabelLog::LabelLog(fs::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      entries_.push_back(feedback_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      raise(Errc::CorruptInput, path_.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
}

void LabelLog::append(const FeedbackRecord& r) {
  std::ofstream out(path_, std::ios::app);
  out << to_json(r).dump() << '\n';
  out.flush();
  if (!out) raise(Errc::IoError, "cannot append to " + path_.string());
  entries_.push_back(r);
}

std::map<std::string, int> LabelLog::replay(std::span<const FeedbackRecord> entries) {
  std::map<std::string, int> out;
  for (const auto& r : entries) out[r.instance_id] = r.label;
  return out;
}

std::map<std::string, int> LabelLog::effective() const { return replay(entries_); }

// ---------------------------------------------------------------- service

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

json safe_metrics(std::span<const uq::UncertaintyRecord> recs, std::span<const spectral::DensityGrid> grids,
                  const std::set<std::string>& exclude) {
  try {
    return evalkit::to_json(pipeline::evaluate(recs, grids, exclude));
  } catch (const Error& e) {
    return {{"error", e.what()}};
  }
}

json summary(const uq::UncertaintyRecord& r) {
  return {{"id", r.instance_id},     {"mu", r.mu},
          {"certainty", r.certainty}, {"score", r.score},
          {"prediction", r.prediction}, {"votes", {r.u0, r.u1}},
          {"grid", "/instances/" + r.instance_id + "/grid"}};
}

}  // namespace

Service::Service(Artifacts artifacts, ServiceConfig config) : art_(std::move(artifacts)), cfg_(std::move(config)) {
  cfg_.inference.validate();
  require(cfg_.h_percent >= 0 && cfg_.h_percent <= 100, Errc::ConfigError, "h must be in [0,100]");
  require(cfg_.retrain_epochs >= 0, Errc::ConfigError, "retrain epochs must be >= 0");
  require(!cfg_.state_dir.empty(), Errc::ConfigError, "state_dir is required");
  require(!art_.data.test.empty(), Errc::EmptyInput, "dataset has no test split");
  require(!art_.checkpoint.state.empty(), Errc::EmptyInput, "checkpoint has no parameters");
  resume();
}

Service::~Service() {
  if (worker_.joinable()) worker_.join();
}

void Service::resume() {
  fs::create_directories(cfg_.state_dir);
  log_.emplace(cfg_.state_dir / "labels.jsonl");
  if (!art_.calibration && fs::exists(cfg_.state_dir / "calibration.json"))
    art_.calibration = pipeline::load_calibration(cfg_.state_dir / "calibration.json");
  if (fs::exists(cfg_.state_dir / "before.jsonl")) {
    before_ = pipeline::read_records(cfg_.state_dir / "before.jsonl");
    hil_ids_ = uq::select_hil(before_, cfg_.h_percent);
    phase_ = Phase::AwaitingLabels;
  }
  if (fs::exists(cfg_.state_dir / "report.json")) {
    std::ifstream in(cfg_.state_dir / "report.json");
    result_ = json::parse(in);
    after_ = pipeline::read_records(cfg_.state_dir / "after.jsonl");
    retrained_ = trainer::load_checkpoint(cfg_.state_dir / "retrained");
    phase_ = Phase::Done;
  }
}

void Service::require_phase(Phase p, const char* action) const {
  if (phase_ != p)
    raise(Errc::Conflict, std::string(action) + " needs phase " + std::string(phase_name(p)) + ", current phase is " +
                              std::string(phase_name(phase_)));
}

const spectral::DensityGrid& Service::find_grid(const std::string& id) const {
  for (const auto* split : {&art_.data.test, &art_.data.val, &art_.data.train})
    for (const auto& g : *split)
      if (g.id == id) return g;
  raise(Errc::NotFound, "unknown instance id " + id);
}

json Service::status() const {
  std::lock_guard lock(mu_);
  const auto labels = log_->effective();
  std::size_t labeled = 0;
  for (const auto& id : hil_ids_) labeled += labels.count(id);
  json j{{"phase", phase_name(phase_)},
         {"session_id", cfg_.session_id},
         {"checkpoint", art_.checkpoint.id},
         {"h_percent", cfg_.h_percent},
         {"hil_count", hil_ids_.size()},
         {"labeled", labeled},
         {"busy", busy_.load()}};
  j["retrained_checkpoint"] = retrained_ ? json(retrained_->id) : json(nullptr);
  if (!error_.empty()) j["error"] = error_;
  return j;
}

void Service::launch(Phase running, std::function<void()> job) {
  if (busy_.exchange(true)) raise(Errc::Conflict, "a job is already running");
  if (worker_.joinable()) worker_.join();
  phase_ = running;
  error_.clear();
  worker_ = std::thread([this, job = std::move(job)] {
    job();
    busy_ = false;
  });
}

json Service::start_inference() {
  std::lock_guard lock(mu_);
  require_phase(Phase::Idle, "inference");
  launch(Phase::Inferring, [this] { run_inference(); });
  return {{"phase", phase_name(phase_)}};
}

void Service::run_inference() {
  try {
    auto model = trainer::load_model(art_.checkpoint);
    const bool no_uq = art_.checkpoint.config.ablation.no_uq;
    pipeline::Calibration cal =
        art_.calibration ? *art_.calibration : pipeline::calibrate(*model, art_.data, cfg_.inference, no_uq);
    cal.checkpoint_id = art_.checkpoint.id;
    auto recs = pipeline::infer(*model, art_.data.test, cal, cfg_.inference, no_uq);
    pipeline::save_calibration(cfg_.state_dir / "calibration.json", cal);
    pipeline::write_records(cfg_.state_dir / "before.jsonl", recs);
    std::lock_guard lock(mu_);
    art_.calibration = std::move(cal);
    before_ = std::move(recs);
    hil_ids_ = uq::select_hil(before_, cfg_.h_percent);
    phase_ = Phase::AwaitingLabels;
  } catch (const std::exception& e) {
    std::lock_guard lock(mu_);
    error_ = e.what();
    phase_ = Phase::Idle;
  }
}

json Service::uncertain(double h) const {
  std::lock_guard lock(mu_);
  require_phase(Phase::AwaitingLabels, "listing uncertain instances");
  require(h >= 0 && h <= 100, Errc::ConfigError, "h must be in [0,100]");
  const auto ids = uq::select_hil(before_, h);
  std::map<std::string, const uq::UncertaintyRecord*> by_id;
  for (const auto& r : before_) by_id[r.instance_id] = &r;
  const auto labels = log_->effective();
  json items = json::array();
  for (const auto& id : ids) {
    json s = summary(*by_id.at(id));
    const auto it = labels.find(id);
    s["label"] = it == labels.end() ? json(nullptr) : json(it->second);
    items.push_back(std::move(s));
  }
  return {{"h", h}, {"total", before_.size()}, {"items", std::move(items)}};
}

json Service::grid(const std::string& id) const {
  const auto& g = find_grid(id);
  json values = json::array(), u8 = json::array();
  for (Index r = 0; r < g.values.rows(); ++r)
    for (Index c = 0; c < g.values.cols(); ++c) {
      const float v = g.values(r, c);
      values.push_back(v);
      u8.push_back(static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
  return {{"id", g.id},         {"rows", g.values.rows()}, {"cols", g.values.cols()},
          {"split", spectral::split_name(g.split)}, {"values", std::move(values)}, {"u8", std::move(u8)}};
}

json Service::submit_label(const std::string& id, int label, const std::string& source) {
  std::lock_guard lock(mu_);
  require_phase(Phase::AwaitingLabels, "labeling");
  find_grid(id);
  if (std::find(hil_ids_.begin(), hil_ids_.end(), id) == hil_ids_.end())
    raise(Errc::OutOfScope, id + " is not in the current HIL set");
  FeedbackRecord r{id, label, source, now_s(), cfg_.session_id};
  feedback_from_json(to_json(r));  // validates label and source
  log_->append(r);
  const auto labels = log_->effective();
  std::size_t labeled = 0;
  for (const auto& h : hil_ids_) labeled += labels.count(h);
  return {{"instance_id", id}, {"label", label}, {"labeled", labeled}, {"total", hil_ids_.size()}};
}

json Service::oracle_label() {
  std::vector<std::string> ids;
  {
    std::lock_guard lock(mu_);
    require_phase(Phase::AwaitingLabels, "oracle labeling");
    ids = hil_ids_;
  }
  std::vector<std::string> missing;
  std::vector<std::pair<std::string, int>> truth;
  for (const auto& id : ids) {
    const auto& g = find_grid(id);
    if (g.label == spectral::Label::Unlabeled)
      missing.push_back(id);
    else
      truth.emplace_back(id, static_cast<int>(g.label));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    raise(Errc::NotFound, "no ground truth for " + list);
  }
  json records = json::array();
  for (const auto& [id, l] : truth) {
    submit_label(id, l, "oracle");
    std::lock_guard lock(mu_);
    records.push_back(to_json(log_->entries().back()));
  }
  return {{"count", records.size()}, {"records", std::move(records)}};
}

json Service::trigger_retrain(bool override_empty) {
  std::lock_guard lock(mu_);
  if (busy_) raise(Errc::Conflict, "a job is already running");
  require_phase(Phase::AwaitingLabels, "retraining");
  const auto labels = log_->effective();
  if (labels.empty() && !override_empty) raise(Errc::Conflict, "no labels submitted; set override_empty to retrain anyway");
  launch(Phase::Retraining, [this] { run_retrain(); });
  return {{"phase", phase_name(phase_)}, {"labels", labels.size()}};
}

void Service::run_retrain() {
  try {
    std::map<std::string, int> labels;
    std::vector<std::string> hil;
    std::vector<uq::UncertaintyRecord> before;
    {
      std::lock_guard lock(mu_);
      labels = log_->effective();
      hil = hil_ids_;
      before = before_;
    }
    trainer::FeedbackSets fb;
    for (const auto& [id, l] : labels) (l ? fb.anomaly : fb.benign).push_back(find_grid(id).values);
    trainer::RetrainConfig rc(art_.checkpoint.config, cfg_.retrain_epochs, cfg_.h_percent);
    trainer::RunOptions opts;
    const fs::path ck_dir = cfg_.state_dir / "retrained";
    auto ck = trainer::retrain_caad_ef(art_.checkpoint, art_.data, fb, rc, opts);
    auto model = trainer::load_model(ck);
    const bool no_uq = ck.config.ablation.no_uq;
    const auto cal = pipeline::calibrate(*model, art_.data, cfg_.inference, no_uq);
    auto after = pipeline::infer(*model, art_.data.test, cal, cfg_.inference, no_uq);

    const std::set<std::string> drop(hil.begin(), hil.end());
    const auto truth = pipeline::truth_labels(art_.data.test);
    json report;
    report["before"] = {{"checkpoint", art_.checkpoint.id},
                        {"all", safe_metrics(before, art_.data.test, {})},
                        {"filtered", safe_metrics(before, art_.data.test, drop)}};
    report["after"] = {{"checkpoint", ck.id},
                       {"all", safe_metrics(after, art_.data.test, {})},
                       {"filtered", safe_metrics(after, art_.data.test, drop)}};
    report["hil_ids"] = hil;
    report["feedback"] = {{"benign", fb.benign.size()}, {"anomaly", fb.anomaly.size()}};
    report["retrain_epochs"] = cfg_.retrain_epochs;
    report["boxplot"] = evalkit::to_json(evalkit::uncertainty_boxplot_data(before, after, hil, truth));

    trainer::save_checkpoint(ck_dir, ck);
    pipeline::write_records(cfg_.state_dir / "after.jsonl", after);
    {
      std::ofstream out(cfg_.state_dir / "report.json");
      out << report.dump(2) << '\n';
    }
    std::lock_guard lock(mu_);
    retrained_ = std::move(ck);
    after_ = std::move(after);
    result_ = std::move(report);
    phase_ = Phase::Done;
  } catch (const std::exception& e) {
    std::lock_guard lock(mu_);
    error_ = e.what();
    phase_ = Phase::AwaitingLabels;
  }
}

json Service::before_after() const {
  std::lock_guard lock(mu_);
  require_phase(Phase::Done, "before/after metrics");
  json j = result_;
  j.erase("boxplot");
  return j;
}

json Service::boxplot() const {
  std::lock_guard lock(mu_);
  require_phase(Phase::Done, "the uncertainty box plot");
  return result_.at("boxplot");
}

std::vector<FeedbackRecord> Service::audit() const {
  std::lock_guard lock(mu_);
  return log_->entries();
}

void Service::wait() const {
  while (busy_) std::this_thread::sleep_for(std::chrono::milliseconds(5));
}

// ---------------------------------------------------------------- http

namespace {

int http_status(Errc code) {
  switch (code) {
    case Errc::ConfigError:
    case Errc::CorruptInput: return 400;
    case Errc::OutOfScope: return 403;
    case Errc::NotFound: return 404;
    case Errc::Conflict: return 409;
    default: return 500;
  }
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      reply(res, 200, f(req));
    } catch (const Error& e) {
      reply(res, http_status(e.code()), {{"error", errc_name(e.code())}, {"message", e.what()}});
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", "ConfigError"}, {"message", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", "Internal"}, {"message", e.what()}});
    }
  };
}

json body_of(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body);
  require(j.is_object(), Errc::ConfigError, "request body must be a JSON object");
  return j;
}

}  // namespace

void mount(httplib::Server& server, Service& s) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Get("/status", guarded([&](const httplib::Request&) { return s.status(); }));
  server.Post("/infer", guarded([&](const httplib::Request&) { return s.start_inference(); }));
  server.Get("/instances/uncertain", guarded([&](const httplib::Request& req) {
               double h = 5;
               if (req.has_param("h")) {
                 try {
                   h = std::stod(req.get_param_value("h"));
                 } catch (const std::exception&) {
                   raise(Errc::ConfigError, "h must be a number");
                 }
               }
               return s.uncertain(h);
             }));
  server.Get(R"(/instances/([^/]+)/grid)",
             guarded([&](const httplib::Request& req) { return s.grid(req.matches[1].str()); }));
  server.Get("/labels", guarded([&](const httplib::Request&) {
               json entries = json::array();
               for (const auto& r : s.audit()) entries.push_back(to_json(r));
               return json{{"entries", entries}};
             }));
  server.Post("/labels", guarded([&](const httplib::Request& req) {
                const json b = body_of(req);
                const auto r = feedback_from_json(b);
                return s.submit_label(r.instance_id, r.label, r.source);
              }));
  server.Post("/oracle-label", guarded([&](const httplib::Request&) { return s.oracle_label(); }));
  server.Post("/retrain", guarded([&](const httplib::Request& req) {
                const json b = body_of(req);
                return s.trigger_retrain(b.value("override_empty", false));
              }));
  server.Get("/metrics/before-after", guarded([&](const httplib::Request&) { return s.before_after(); }));
  server.Get("/reports/uncertainty-boxplot", guarded([&](const httplib::Request&) { return s.boxplot(); }));
}

void serve(Service& service, const std::string& host, int port) {
  httplib::Server server;
  mount(server, service);
  if (!server.listen(host, port)) raise(Errc::IoError, "cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace caad::feedback
