#include "caad/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "caad/errors.hpp"
#include "caad/feedback_api.hpp"
#include "caad/mnist.hpp"
#include "caad/pipeline.hpp"

namespace caad::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct DataConfig {
  std::string kind = "synthetic";  // synthetic | mnist
  Index size = 32;
  std::size_t train = 600, val = 150, test = 300;
  double p_thresh = 0.0005;
  std::string mnist_dir;
  Index mnist_size = 64;
  int digit = 4;
  std::uint64_t seed = 0;
};

json to_json(const DataConfig& d) {
  return {{"kind", d.kind},   {"size", d.size},         {"train", d.train},         {"val", d.val},
          {"test", d.test},   {"p_thresh", d.p_thresh}, {"mnist_dir", d.mnist_dir}, {"mnist_size", d.mnist_size},
          {"digit", d.digit}, {"seed", d.seed}};
}

DataConfig data_config_from_json(const json& j) {
  DataConfig d;
  require(j.is_object(), Errc::ConfigError, "data config must be an object");
  for (const auto& [k, v] : j.items()) {
    try {
      if (k == "kind") d.kind = v.get<std::string>();
      else if (k == "size") d.size = v.get<Index>();
      else if (k == "train") d.train = v.get<std::size_t>();
      else if (k == "val") d.val = v.get<std::size_t>();
      else if (k == "test") d.test = v.get<std::size_t>();
      else if (k == "p_thresh") d.p_thresh = v.get<double>();
      else if (k == "mnist_dir") d.mnist_dir = v.get<std::string>();
      else if (k == "mnist_size") d.mnist_size = v.get<Index>();
      else if (k == "digit") d.digit = v.get<int>();
      else if (k == "seed") d.seed = v.get<std::uint64_t>();
      else raise(Errc::ConfigError, "unknown config field data." + k);
    } catch (const json::exception&) {
      raise(Errc::ConfigError, "config field data." + k + " has the wrong type");
    }
  }
  require(d.kind == "synthetic" || d.kind == "mnist", Errc::ConfigError, "data.kind must be synthetic or mnist");
  require(d.size >= 4 && d.mnist_size >= 4, Errc::ConfigError, "data.size and data.mnist_size must be >= 4");
  require(d.train > 0 && d.val > 0 && d.test > 0, Errc::ConfigError, "data split sizes must be positive");
  return d;
}

struct FeedbackConfig {
  double h_percent = 5;
  int retrain_epochs = 7;
};

struct Settings {
  trainer::TrainConfig train;
  pipeline::InferenceConfig inference;
  DataConfig data;
  FeedbackConfig feedback;
  bool deterministic = false;

  json to_json() const {
    return {{"train", trainer::to_json(train)},
            {"inference", pipeline::to_json(inference)},
            {"data", cli::to_json(data)},
            {"feedback", {{"h_percent", feedback.h_percent}, {"retrain_epochs", feedback.retrain_epochs}}}};
  }
};

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

Settings resolve(const std::string& config_path, const std::vector<std::string>& overrides,
                 std::optional<std::uint64_t> seed) {
  json j = Settings{}.to_json();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    require(static_cast<bool>(in), Errc::ConfigError, "cannot read config " + config_path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      raise(Errc::ConfigError, config_path + ": " + e.what());
    }
    require(file.is_object(), Errc::ConfigError, config_path + " must hold a JSON object");
    for (const auto& [k, v] : file.items()) {
      if (!j.contains(k)) raise(Errc::ConfigError, "unknown config section " + k);
      j[k].merge_patch(v);
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    require(eq != std::string::npos && eq > 0, Errc::ConfigError, "--set expects key=value, got " + o);
    std::string path = o.substr(0, eq);
    std::replace(path.begin(), path.end(), '.', '/');
    const json::json_pointer ptr("/" + path);
    require(j.contains(ptr), Errc::ConfigError, "unknown config field " + o.substr(0, eq));
    j[ptr] = parse_value(o.substr(eq + 1));
  }
  Settings s;
  s.train = trainer::train_config_from_json(j.at("train"));
  s.inference = pipeline::inference_config_from_json(j.at("inference"));
  s.data = data_config_from_json(j.at("data"));
  const auto& f = j.at("feedback");
  for (const auto& [k, v] : f.items())
    if (k != "h_percent" && k != "retrain_epochs") raise(Errc::ConfigError, "unknown config field feedback." + k);
  try {
    s.feedback.h_percent = f.value("h_percent", 5.0);
    s.feedback.retrain_epochs = f.value("retrain_epochs", 7);
  } catch (const json::exception&) {
    raise(Errc::ConfigError, "feedback config has the wrong type");
  }
  require(s.feedback.h_percent >= 0 && s.feedback.h_percent <= 100, Errc::ConfigError, "feedback.h_percent must be in [0,100]");
  require(s.feedback.retrain_epochs >= 0, Errc::ConfigError, "feedback.retrain_epochs must be >= 0");
  if (seed) s.train.seed = s.inference.seed = s.data.seed = *seed;
  s.train.validate();
  return s;
}

// ---------------------------------------------------------------- run directory

struct RunDir {
  fs::path root;
  fs::path emissions() const { return root / "emissions.jsonl"; }
  fs::path data() const { return root / "data"; }
  fs::path checkpoint() const { return root / "checkpoint"; }
  fs::path calibration() const { return root / "calibration.json"; }
  fs::path records() const { return root / "records.jsonl"; }
  fs::path metrics() const { return root / "metrics.json"; }
  fs::path feedback() const { return root / "feedback"; }
  fs::path retrained() const { return root / "retrained"; }
  fs::path report() const { return root / "report.json"; }
};

void need(const fs::path& p, const char* producer) {
  if (!fs::exists(p)) raise(Errc::NotFound, p.string() + " is missing; run `caad " + producer + "` first");
}

std::uint64_t fnv1a(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char c;
  while (in.get(c)) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ull;
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  out << j.dump(2) << '\n';
  if (!out) raise(Errc::IoError, "cannot write " + p.string());
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) raise(Errc::NotFound, "cannot read " + p.string());
  return json::parse(in);
}

void write_manifest(const RunDir& rd, const std::string& verb, const std::vector<std::string>& args, const Settings& s,
                    const std::vector<fs::path>& artifacts) {
  json files = json::object();
  for (const auto& a : artifacts) {
    if (fs::is_regular_file(a)) {
      files[fs::relative(a, rd.root).string()] = hex(fnv1a(a));
    } else if (fs::is_directory(a)) {
      std::vector<fs::path> inner;
      for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) inner.push_back(e.path());
      std::sort(inner.begin(), inner.end());
      for (const auto& f : inner) files[fs::relative(f, rd.root).string()] = hex(fnv1a(f));
    }
  }
  write_json(rd.root / ("manifest-" + verb + ".json"), {{"verb", verb},
                                                         {"args", args},
                                                         {"deterministic", s.deterministic},
                                                         {"seed", s.train.seed},
                                                         {"config", s.to_json()},
                                                         {"artifacts", files}});
}

spectral::DatasetBundle synth_bundle(const DataConfig& d, std::vector<spectral::EmissionRecord>* emissions) {
  spectral::GridSpec spec;
  spec.n_freq_bins = spec.n_bw_bins = d.size;
  const std::size_t n = d.train + d.val + d.test;
  auto records = spectral::synth_generate(spectral::desk_scenario(spec, n, d.seed));
  spectral::AssembleOptions o;
  o.train = {0, d.train};
  o.val = {d.train, d.train + d.val};
  o.test = {d.train + d.val, n};
  o.p_thresh = d.p_thresh;
  o.seed = d.seed;
  o.injection.seed = d.seed;
  auto bundle = spectral::assemble_dataset(records, spec, o);
  if (emissions) *emissions = std::move(records);
  return bundle;
}

spectral::DatasetBundle assemble_from(const fs::path& emissions, const DataConfig& d) {
  std::ifstream in(emissions);
  if (!in) raise(Errc::NotFound, "cannot read " + emissions.string());
  const auto parsed = spectral::parse_emissions(in);
  spectral::GridSpec spec;
  spec.n_freq_bins = spec.n_bw_bins = d.size;
  const std::size_t n = d.train + d.val + d.test;
  spectral::AssembleOptions o;
  o.train = {0, d.train};
  o.val = {d.train, d.train + d.val};
  o.test = {d.train + d.val, n};
  o.p_thresh = d.p_thresh;
  o.seed = d.seed;
  o.injection.seed = d.seed;
  return spectral::assemble_dataset(parsed.records, spec, o);
}

void fit_to_data(trainer::TrainConfig& c, const spectral::DatasetBundle& data) {
  require(!data.train.empty(), Errc::EmptyInput, "dataset has no training grids");
  const auto& g = data.train.front().values;
  c.generator.height = c.critic.height = g.rows();
  c.generator.width = c.critic.width = g.cols();
}

std::vector<std::string> metric_row(const std::string& name, const evalkit::MetricsReport& m) {
  using evalkit::fixed;
  return {name, fixed(m.f1.benign_f1), fixed(m.f1.anomaly_f1), fixed(m.f1.weighted_f1), fixed(m.auroc), fixed(m.auprc)};
}

const std::vector<std::string> kMetricHeader{"Model", "Benign F1", "Anomaly F1", "Wt-F1", "AUROC", "AUPRC"};

trainer::RunOptions progress(std::ostream& out, const fs::path& dir) {
  trainer::RunOptions o;
  o.checkpoint_dir = dir;
  o.on_epoch = [&out](const trainer::EpochLosses& e) {
    out << "epoch " << e.epoch << " critic " << e.critic << " supcon " << e.supcon << " generator " << e.generator
        << std::endl;
  };
  return o;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoull(tok));
    } catch (const std::exception&) {
      raise(Errc::ConfigError, "--seeds expects a comma-separated list of integers");
    }
  }
  require(!out.empty(), Errc::ConfigError, "--seeds is empty");
  return out;
}

trainer::Ablation parse_ablation(const std::string& label) {
  trainer::Ablation a;
  if (label == "full") return a;
  std::stringstream ss(label);
  std::string tok;
  while (std::getline(ss, tok, '+')) {
    if (tok == "no_cl") a.no_cl = true;
    else if (tok == "no_uq") a.no_uq = true;
    else if (tok == "no_unet") a.no_unet = true;
    else if (tok == "no_wgan_gp") a.no_wgan_gp = true;
    else raise(Errc::ConfigError, "unknown ablation " + tok);
  }
  return a;
}

std::optional<evalkit::MetricsReport> try_evaluate(std::span<const uq::UncertaintyRecord> recs,
                                                   std::span<const spectral::DensityGrid> grids,
                                                   const std::set<std::string>& exclude = {}) {
  try {
    return pipeline::evaluate(recs, grids, exclude);
  } catch (const Error& e) {
    if (e.code() != Errc::UndefinedMetric && e.code() != Errc::EmptyInput) throw;
    warn(e.what());
    return std::nullopt;
  }
}

json metrics_json(const std::optional<evalkit::MetricsReport>& m) { return m ? evalkit::to_json(*m) : json(nullptr); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CAAD anomaly detection pipeline", "caad"};
  app.require_subcommand(1);
  std::string run_dir = "run", config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  app.add_option("--run-dir", run_dir, "Directory holding every artifact")->capture_default_str();
  app.add_option("--config", config_path, "JSON config with train/inference/data/feedback sections");
  app.add_option("--set", overrides, "Override a config field, e.g. train.loss.alpha=0");
  app.add_option("--seed", seed, "Seed for every stochastic component");
  app.add_flag("--deterministic", deterministic, "Deterministic numerics (recorded in manifests)");

  auto* data = app.add_subcommand("data", "Build a dataset bundle");
  data->require_subcommand(1);
  auto* synth = data->add_subcommand("synth", "Synthesize desk-scale emissions and assemble them");
  auto* assemble = data->add_subcommand("assemble", "Assemble a bundle from an emission-metadata file");
  std::string emissions_path;
  assemble->add_option("--emissions", emissions_path, "JSONL emission metadata")->required();
  auto* mnist_cmd = data->add_subcommand("mnist", "One-class MNIST bundle");

  auto* train = app.add_subcommand("train", "Train CAAD on the bundle");
  auto* ablate = app.add_subcommand("ablate", "Train with ablation switches");
  bool no_cl = false, no_uq = false, no_unet = false, no_wgan_gp = false;
  ablate->add_flag("--no-cl", no_cl, "Drop the contrastive term");
  ablate->add_flag("--no-uq", no_uq, "Deterministic inference");
  ablate->add_flag("--no-unet", no_unet, "Generator without skip connections");
  ablate->add_flag("--no-wgan-gp", no_wgan_gp, "Cross-entropy GAN without gradient penalty");
  auto* calibrate = app.add_subcommand("calibrate", "Fit centroids and the anomaly threshold");
  auto* infer = app.add_subcommand("infer", "MC-dropout inference on the test split");
  auto* feedback = app.add_subcommand("feedback", "Select the most uncertain instances for expert labels");
  feedback->set_help_flag("--help", "Print this help message and exit");
  bool oracle = false;
  std::optional<double> h_opt;
  feedback->add_flag("--oracle", oracle, "Label from ground truth");
  feedback->add_option("--h", h_opt, "Percent of instances to label");
  auto* retrain = app.add_subcommand("retrain", "Retrain with expert feedback");
  std::optional<int> retrain_epochs;
  retrain->add_option("--epochs", retrain_epochs, "Retraining epochs");
  auto* eval = app.add_subcommand("eval", "Metrics report (before/after when retrained)");
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate over seeds and ablations");
  std::string seeds_text = "1,2,3", ablations_text = "full";
  sweep->add_option("--seeds", seeds_text, "Comma-separated seeds")->capture_default_str();
  sweep->add_option("--ablations", ablations_text, "Comma-separated labels such as full,no_cl")->capture_default_str();
  auto* serve = app.add_subcommand("serve", "Run the feedback HTTP service");
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    Settings s = resolve(config_path, overrides, seed);
    s.deterministic = deterministic;
    const RunDir rd{run_dir};
    fs::create_directories(rd.root);

    auto load_data = [&] {
      need(rd.data(), "data synth");
      return spectral::load_bundle(rd.data());
    };
    auto load_ckpt = [&] {
      need(rd.checkpoint(), "train");
      return trainer::load_checkpoint(rd.checkpoint());
    };

    if (data->parsed()) {
      spectral::DatasetBundle bundle;
      std::vector<fs::path> made{rd.data()};
      if (synth->parsed()) {
        std::vector<spectral::EmissionRecord> records;
        bundle = synth_bundle(s.data, &records);
        std::ofstream e(rd.emissions());
        spectral::write_emissions(e, records);
        made.push_back(rd.emissions());
      } else if (assemble->parsed()) {
        bundle = assemble_from(emissions_path, s.data);
      } else if (mnist_cmd->parsed()) {
        mnist::OneClassOptions o;
        o.digit = s.data.digit;
        o.n_train = s.data.train;
        o.n_val = s.data.val;
        o.size = s.data.mnist_size;
        o.seed = s.data.seed;
        bundle = mnist::one_class_bundle(s.data.mnist_dir.empty() ? fs::path(CAAD_MNIST_DIR) : fs::path(s.data.mnist_dir), o);
      }
      fs::remove_all(rd.data());
      spectral::save_bundle(rd.data(), bundle);
      out << "bundle " << spectral::bundle_hash(bundle) << ": train " << bundle.train.size() << " val "
          << bundle.val.size() << " test " << bundle.test.size() << '\n';
      write_manifest(rd, "data", args, s, made);
      return 0;
    }

    if (train->parsed() || ablate->parsed()) {
      const auto bundle = load_data();
      trainer::TrainConfig tc = s.train;
      if (ablate->parsed()) tc = trainer::ablate(tc, {no_cl, no_uq, no_unet, no_wgan_gp});
      fit_to_data(tc, bundle);
      fs::remove_all(rd.checkpoint());
      const auto ck = trainer::train_caad(bundle, tc, progress(out, rd.checkpoint()));
      out << "checkpoint " << ck.id << " (" << tc.ablation.label() << ", epoch " << ck.epoch << ")\n";
      for (const auto& stale : {rd.calibration(), rd.records(), rd.metrics(), rd.report()}) fs::remove(stale);
      fs::remove_all(rd.retrained());
      fs::remove_all(rd.feedback());
      s.train = tc;
      write_manifest(rd, ablate->parsed() ? "ablate" : "train", args, s, {rd.checkpoint()});
      return 0;
    }

    if (calibrate->parsed()) {
      const auto bundle = load_data();
      const auto ck = load_ckpt();
      auto model = trainer::load_model(ck);
      auto cal = pipeline::calibrate(*model, bundle, s.inference, ck.config.ablation.no_uq);
      cal.checkpoint_id = ck.id;
      pipeline::save_calibration(rd.calibration(), cal);
      out << "theta " << cal.threshold.theta << " (phi " << cal.threshold.phi << ", " << cal.threshold.n << " scores)\n";
      write_manifest(rd, "calibrate", args, s, {rd.calibration()});
      return 0;
    }

    if (infer->parsed()) {
      const auto bundle = load_data();
      const auto ck = load_ckpt();
      need(rd.calibration(), "calibrate");
      const auto cal = pipeline::load_calibration(rd.calibration());
      require(cal.checkpoint_id == ck.id, Errc::Conflict, "calibration belongs to another checkpoint; rerun calibrate");
      auto model = trainer::load_model(ck);
      const auto recs = pipeline::infer(*model, bundle.test, cal, s.inference, ck.config.ablation.no_uq);
      pipeline::write_records(rd.records(), recs);
      std::size_t flagged = 0;
      for (const auto& r : recs) flagged += r.prediction;
      out << recs.size() << " records, " << flagged << " flagged\n";
      write_manifest(rd, "infer", args, s, {rd.records()});
      return 0;
    }

    if (feedback->parsed()) {
      need(rd.records(), "infer");
      const auto recs = pipeline::read_records(rd.records());
      const double h = h_opt.value_or(s.feedback.h_percent);
      const auto hil = uq::select_hil(recs, h);
      fs::remove_all(rd.feedback());
      fs::create_directories(rd.feedback());
      write_json(rd.feedback() / "hil.json", {{"h_percent", h}, {"ids", hil}});
      if (oracle) {
        const auto truth = pipeline::truth_labels(load_data().test);
        feedback::LabelLog log(rd.feedback() / "labels.jsonl");
        std::size_t anomalies = 0;
        for (const auto& id : hil) {
          const auto it = truth.find(id);
          if (it == truth.end()) raise(Errc::NotFound, "no ground truth for " + id);
          log.append({id, it->second, "oracle", 0.0, "cli"});
          anomalies += it->second;
        }
        out << hil.size() << " instances labeled by the oracle (" << anomalies << " anomalous)\n";
      } else {
        for (const auto& id : hil) out << id << '\n';
        out << hil.size() << " instances selected; label them with `caad serve`\n";
      }
      write_manifest(rd, "feedback", args, s, {rd.feedback()});
      return 0;
    }

    if (retrain->parsed()) {
      const auto bundle = load_data();
      const auto ck = load_ckpt();
      need(rd.feedback() / "labels.jsonl", "feedback --oracle");
      const feedback::LabelLog log(rd.feedback() / "labels.jsonl");
      trainer::FeedbackSets fb;
      std::map<std::string, const spectral::DensityGrid*> by_id;
      for (const auto& g : bundle.test) by_id[g.id] = &g;
      for (const auto& [id, l] : log.effective()) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) raise(Errc::NotFound, "labeled id " + id + " is not in the test split");
        (l ? fb.anomaly : fb.benign).push_back(it->second->values);
      }
      trainer::RetrainConfig rc(ck.config, retrain_epochs.value_or(s.feedback.retrain_epochs), s.feedback.h_percent);
      fs::remove_all(rd.retrained());
      const auto r = trainer::retrain_caad_ef(ck, bundle, fb, rc, progress(out, rd.retrained()));
      if (rc.epochs == 0) trainer::save_checkpoint(rd.retrained(), r);
      out << "retrained " << r.id << " from " << ck.id << " with " << fb.benign.size() << " benign and "
          << fb.anomaly.size() << " anomalous labels\n";
      write_manifest(rd, "retrain", args, s, {rd.retrained()});
      return 0;
    }

    if (eval->parsed()) {
      const auto bundle = load_data();
      const auto ck = load_ckpt();
      need(rd.records(), "infer");
      const auto before = pipeline::read_records(rd.records());
      const auto label = ck.config.ablation.label();
      json report = {{"ablation", label}, {"checkpoint", ck.id}};
      const auto m = pipeline::evaluate(before, bundle.test);
      report["metrics"] = evalkit::to_json(m);
      std::vector<std::vector<std::string>> rows{metric_row(label == "full" ? "CAAD" : "CAAD " + label, m)};
      std::vector<fs::path> made{rd.metrics()};
      if (fs::exists(rd.retrained())) {
        need(rd.feedback() / "hil.json", "feedback");
        const auto hil = read_json(rd.feedback() / "hil.json").at("ids").get<std::vector<std::string>>();
        const std::set<std::string> drop(hil.begin(), hil.end());
        const auto rk = trainer::load_checkpoint(rd.retrained());
        auto model = trainer::load_model(rk);
        const auto cal = pipeline::calibrate(*model, bundle, s.inference, rk.config.ablation.no_uq);
        const auto after = pipeline::infer(*model, bundle.test, cal, s.inference, rk.config.ablation.no_uq);
        pipeline::write_records(rd.root / "records-retrained.jsonl", after);
        const auto filtered = try_evaluate(after, bundle.test, drop);
        const auto after_all = try_evaluate(after, bundle.test);
        const auto groups = evalkit::uncertainty_boxplot_data(before, after, hil, pipeline::truth_labels(bundle.test));
        json ba = {{"before", {{"checkpoint", ck.id}, {"all", evalkit::to_json(m)},
                               {"filtered", metrics_json(try_evaluate(before, bundle.test, drop))}}},
                   {"after", {{"checkpoint", rk.id}, {"all", metrics_json(after_all)}, {"filtered", metrics_json(filtered)}}},
                   {"hil_ids", hil},
                   {"boxplot", evalkit::to_json(groups)}};
        write_json(rd.report(), ba);
        made.push_back(rd.report());
        made.push_back(rd.root / "records-retrained.jsonl");
        if (after_all) rows.push_back(metric_row("CAAD-EF", *after_all));
        if (filtered) rows.push_back(metric_row("CAAD-EF " + evalkit::fixed(100 - s.feedback.h_percent, 0) + "%", *filtered));
        for (const auto& [group, b] : groups)
          out << group << " certainty median " << evalkit::fixed(b.before.median, 3) << " -> "
              << evalkit::fixed(b.after.median, 3) << '\n';
      }
      write_json(rd.metrics(), report);
      out << evalkit::format_table(kMetricHeader, rows);
      write_manifest(rd, "eval", args, s, made);
      return 0;
    }

    if (sweep->parsed()) {
      const auto bundle = load_data();
      const auto seeds = parse_seeds(seeds_text);
      std::vector<std::string> labels;
      {
        std::stringstream ss(ablations_text);
        std::string tok;
        while (std::getline(ss, tok, ',')) labels.push_back(tok);
      }
      json summary = json::array();
      std::vector<std::vector<std::string>> rows;
      for (const auto& label : labels) {
        std::vector<double> wf1;
        for (const auto sd : seeds) {
          trainer::TrainConfig tc = trainer::ablate(s.train, parse_ablation(label));
          tc.seed = sd;
          fit_to_data(tc, bundle);
          pipeline::InferenceConfig ic = s.inference;
          ic.seed = sd;
          const auto ck = trainer::train_caad(bundle, tc);
          const auto ev = pipeline::run_evaluation(ck, bundle, ic);
          const fs::path cell = rd.root / "sweep" / (label + "-seed" + std::to_string(sd));
          write_json(cell / "metrics.json", {{"ablation", label}, {"seed", sd}, {"checkpoint", ck.id},
                                             {"metrics", evalkit::to_json(ev.metrics)}});
          wf1.push_back(ev.metrics.f1.weighted_f1);
          rows.push_back(metric_row(label + " seed " + std::to_string(sd), ev.metrics));
          out << label << " seed " << sd << " weighted F1 " << evalkit::fixed(ev.metrics.f1.weighted_f1, 3) << std::endl;
        }
        summary.push_back({{"ablation", label}, {"weighted_f1", wf1}, {"median_weighted_f1", median(wf1)}});
      }
      write_json(rd.root / "sweep" / "summary.json", summary);
      out << evalkit::format_table(kMetricHeader, rows);
      write_manifest(rd, "sweep", args, s, {rd.root / "sweep"});
      return 0;
    }

    if (serve->parsed()) {
      feedback::Artifacts a{load_ckpt(), load_data(), std::nullopt};
      if (fs::exists(rd.calibration())) {
        auto cal = pipeline::load_calibration(rd.calibration());
        if (cal.checkpoint_id == a.checkpoint.id) a.calibration = std::move(cal);
      }
      feedback::ServiceConfig sc;
      sc.state_dir = rd.root / "serve";
      sc.h_percent = s.feedback.h_percent;
      sc.retrain_epochs = s.feedback.retrain_epochs;
      sc.inference = s.inference;
      feedback::Service service(std::move(a), sc);
      out << "listening on http://" << host << ":" << port << std::endl;
      feedback::serve(service, host, port);
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == Errc::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace caad::cli
