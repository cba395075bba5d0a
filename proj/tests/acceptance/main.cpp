// One PASS/FAIL line per acceptance criterion. Pass criterion keys as arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "caad/cli.hpp"
#include "caad/detector.hpp"
#include "caad/errors.hpp"
#include "caad/mnist.hpp"
#include "caad/objectives.hpp"
#include "caad/pipeline.hpp"

#include "../support/oracles.hpp"

using namespace caad;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... v) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, v...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Eigen::MatrixXd unit_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
  Eigen::MatrixXd z(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) z(i, j) = standard_normal(rng);
    z.row(i).normalize();
  }
  return z;
}

// ---------------------------------------------------------------- exact suites

Outcome loss_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = derive_rng(11, 1);
  const double taus[] = {0.07, 0.5, 1.0};
  double worst = 0;
  objectives::LossConfig cfg;
  for (int b = 0; b < 200; ++b) {
    cfg.tau = taus[b % 3];
    const auto n = static_cast<Eigen::Index>(2 + uniform_index(rng, 15));
    const auto d = static_cast<Eigen::Index>(1 + uniform_index(rng, 8));
    const Eigen::MatrixXd z = unit_rows(n, d, rng);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& v : y) v = static_cast<int>(uniform_index(rng, 2));
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
    worst = std::max(worst, rel(objectives::supcon_loss(z, y, cfg.tau), oracle::supcon(z, y, cfg.tau)));
    worst = std::max(worst, rel(objectives::supclass_loss(z, y, 1, cfg.tau), oracle::supcon(z, y, cfg.tau, 1)));
    auto part = [&] { return unit_rows(static_cast<Eigen::Index>(uniform_index(rng, 5)), d, rng); };
    const Eigen::MatrixXd x = unit_rows(1 + static_cast<Eigen::Index>(uniform_index(rng, 4)), d, rng), xa = part(),
                          ben = part(), anom = part();
    const auto h = objectives::hil_loss(x, xa, ben, anom, cfg);
    worst = std::max(worst, rel(h.total, oracle::hil(x, xa, ben, anom, cfg.tau)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-5 && secs < 60, fmt("max rel err %.2e (tol 1e-5), %.2fs (limit 60s)", worst, secs)};
}

Outcome gradient_penalty() {
  using T = double;
  const nn::Index p = 64;
  auto linear_critic = [&](double slope) {
    Rng rng = derive_rng(3, 3);
    nn::Tensor<T> w(nn::Shape{p, 1});
    for (nn::Index i = 0; i < p; ++i) w[i] = standard_normal(rng);
    w.flat() *= slope / w.flat().matrix().norm();
    return nn::Var<T>(w, true);
  };
  Rng rng = derive_rng(4, 4);
  nn::Tensor<T> pts(nn::Shape{16, p});
  for (nn::Index i = 0; i < pts.size(); ++i) pts[i] = standard_normal(rng);
  auto pen = [&](double slope) {
    const auto w = linear_critic(slope);
    objectives::ScoreFn<T> f = [&](const nn::Var<T>& x) { return nn::matmul(x, w); };
    return objectives::gradient_penalty<T>(f, pts, 10.0).value()[0];
  };
  const double unit = pen(1.0), two = pen(2.0);
  return {unit < 1e-6 && std::abs(two - 10.0) <= 1e-4,
          fmt("unit slope %.2e (< 1e-6), slope 2 gives %.8f (10 +- 1e-4)", unit, two)};
}

Outcome vote_arithmetic() {
  std::size_t checked = 0, bad = 0;
  for (int k = 2; k <= 20; ++k)
    for (int u1 = 0; u1 <= k; ++u1) {
      const int u0 = k - u1;
      const double mu = uq::uncertainty(u0, u1);
      const double want = 1.0 - static_cast<double>(std::max(u0, u1)) / k;
      const int pred = uq::majority(u0, u1);
      bad += mu != want || pred != (u1 >= u0 ? 1 : 0);
      std::vector<double> s(static_cast<std::size_t>(k), 0.0);
      std::fill_n(s.begin(), u1, 1.0);
      const auto r = uq::vote_and_score("x", s, 0.5, 0.0);
      bad += r.u0 != u0 || r.u1 != u1 || r.mu != want || r.certainty != 1.0 - want;
      ++checked;
    }
  return {bad == 0, fmt("%zu vote patterns over k=2..20, %zu mismatches", checked, bad)};
}

Outcome threshold_calibration() {
  Rng rng = derive_rng(5, 5);
  std::vector<double> v(1000);
  for (auto& x : v) x = standard_normal(rng);
  double worst = 0, prev = -INFINITY;
  bool monotone = true;
  for (double phi : {0.9, 0.95, 0.99}) {
    const auto c = detector::calibrate_threshold(v, phi);
    double below = 0;
    for (double x : v) below += x < c.theta;
    worst = std::max(worst, std::abs(below / 1000.0 - phi));
    monotone &= c.theta >= prev && c.theta == oracle::nearest_rank(v, phi);
    prev = c.theta;
  }
  return {worst <= 1.0 / 1000 + 1e-12 && monotone, fmt("max |P(s<theta)-phi| %.4f (tol 0.001), monotone %s", worst,
                                               monotone ? "yes" : "no")};
}

Outcome metric_oracles() {
  Rng rng = derive_rng(6, 6);
  std::size_t mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 199);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(uniform_index(rng, 20));  // ties on purpose
      y[i] = static_cast<int>(uniform_index(rng, 2));
    }
    y[0] = 0;
    y[1] = 1;
    mismatches += evalkit::auroc(s, y) != oracle::auroc_pairwise(s, y);
  }
  const double wf1 = evalkit::weighted_f1(0.93, 0.90, 3894, 3738);
  const std::string shown = evalkit::fixed(wf1, 2);
  return {mismatches == 0 && shown == "0.92",
          fmt("AUROC mismatches %zu/200, Table I LTW1 weighted F1 %.4f -> %s", mismatches, wf1, shown.c_str())};
}

// ---------------------------------------------------------------- desk runs

spectral::DatasetBundle desk_data(std::uint64_t seed) {
  spectral::GridSpec spec;
  spec.n_freq_bins = spec.n_bw_bins = 32;
  const auto records = spectral::synth_generate(spectral::desk_scenario(spec, 1050, seed));
  spectral::AssembleOptions o;
  o.train = {0, 600};
  o.val = {600, 750};
  o.test = {750, 1050};
  o.seed = seed;
  o.injection.seed = seed;
  return spectral::assemble_dataset(records, spec, o);
}

trainer::TrainConfig desk_config(std::uint64_t seed) {
  trainer::TrainConfig c;
  c.epochs = 30;
  c.seed = seed;
  c.generator.height = c.generator.width = 32;
  c.critic.height = c.critic.width = 32;
  return c;
}

struct DeskRun {
  trainer::Checkpoint ckpt;
  pipeline::Evaluation eval;
  double seconds = 0;
};

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

std::map<std::uint64_t, spectral::DatasetBundle>& desk_cache() {
  static std::map<std::uint64_t, spectral::DatasetBundle> c;
  return c;
}
const spectral::DatasetBundle& desk(std::uint64_t seed) {
  auto& c = desk_cache();
  if (!c.count(seed)) c.emplace(seed, desk_data(seed));
  return c.at(seed);
}

const DeskRun& desk_run(std::uint64_t seed, bool no_cl) {
  static std::map<std::pair<std::uint64_t, bool>, DeskRun> cache;
  const auto key = std::make_pair(seed, no_cl);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  auto cfg = desk_config(seed);
  if (no_cl) cfg = trainer::ablate(cfg, {true, false, false, false});
  const auto t0 = std::chrono::steady_clock::now();
  DeskRun r;
  r.ckpt = trainer::train_caad(desk(seed), cfg);
  pipeline::InferenceConfig ic;
  ic.seed = seed;
  r.eval = pipeline::run_evaluation(r.ckpt, desk(seed), ic);
  r.seconds = seconds_since(t0);
  const auto& m = r.eval.metrics;
  std::printf("  [desk seed %llu %s] wF1 %.3f anomaly F1 %.3f AUROC %.3f AUPRC %.3f (%.0fs)\n",
              static_cast<unsigned long long>(seed), no_cl ? "no_cl" : "full", m.f1.weighted_f1, m.f1.anomaly_f1,
              m.auroc, m.auprc, r.seconds);
  std::fflush(stdout);
  return cache.emplace(key, std::move(r)).first->second;
}

Outcome end_to_end() {
  const auto& r = desk_run(1, false);
  const auto& m = r.eval.metrics;
  return {m.f1.anomaly_f1 >= 0.85 && m.auroc >= 0.92 && r.seconds <= 3600,
          fmt("anomaly F1 %.3f (>= 0.85), AUROC %.3f (>= 0.92), %.0fs (<= 3600s)", m.f1.anomaly_f1, m.auroc, r.seconds)};
}

Outcome ablation_direction() {
  std::vector<double> full, nocl;
  for (auto s : kSeeds) {
    full.push_back(desk_run(s, false).eval.metrics.f1.weighted_f1);
    nocl.push_back(desk_run(s, true).eval.metrics.f1.weighted_f1);
  }
  const double gap = median(full) - median(nocl);
  return {gap >= 0.05, fmt("median weighted F1 full %.3f vs no_cl %.3f, gap %.3f (>= 0.05)", median(full), median(nocl), gap)};
}

Outcome feedback_loop() {
  int good = 0;
  std::string detail;
  for (auto s : kSeeds) {
    const auto& base = desk_run(s, false);
    const auto& data = desk(s);
    const auto& before = base.eval.records;
    const auto hil = uq::select_hil(before, 5);
    const auto truth = pipeline::truth_labels(data.test);
    std::map<std::string, const spectral::DensityGrid*> by_id;
    for (const auto& g : data.test) by_id[g.id] = &g;
    trainer::FeedbackSets fb;
    for (const auto& id : hil) (truth.at(id) ? fb.anomaly : fb.benign).push_back(by_id.at(id)->values);
    const auto ck = trainer::retrain_caad_ef(base.ckpt, data, fb, trainer::RetrainConfig(base.ckpt.config, 7, 5));
    pipeline::InferenceConfig ic;
    ic.seed = s;
    const auto after = pipeline::run_evaluation(ck, data, ic);
    std::map<std::string, double> cb, ca;
    for (const auto& r : before) cb[r.instance_id] = r.certainty;
    for (const auto& r : after.records) ca[r.instance_id] = r.certainty;
    std::vector<double> hb, ha;
    for (const auto& id : hil) {
      hb.push_back(cb.at(id));
      ha.push_back(ca.at(id));
    }
    const double w0 = base.eval.metrics.f1.weighted_f1, w1 = after.metrics.f1.weighted_f1;
    const bool ok = w1 >= w0 && median(ha) > median(hb);
    good += ok;
    detail += fmt("%sseed %llu wF1 %.3f->%.3f certainty %.2f->%.2f (%zu benign, %zu anomalous labels)",
                  detail.empty() ? "" : "; ", static_cast<unsigned long long>(s), w0, w1, median(hb), median(ha),
                  fb.benign.size(), fb.anomaly.size());
  }
  return {good >= 2, fmt("%d/3 seeds improve (need 2): ", good) + detail};
}

Outcome mnist_protocol() {
  const auto t0 = std::chrono::steady_clock::now();
  mnist::OneClassOptions o;
  o.digit = 4;
  o.n_train = 2000;
  o.size = 64;
  o.seed = 1;
  const auto data = mnist::one_class_bundle(CAAD_MNIST_DIR, o);
  trainer::TrainConfig c;
  c.epochs = 20;
  c.seed = 1;
  c.generator.height = c.generator.width = o.size;
  c.critic.height = c.critic.width = o.size;
  c.transform.kind = transforms::NegativeTransformConfig::Kind::Rot90;
  const auto ck = trainer::train_caad(data, c);
  pipeline::InferenceConfig ic;
  ic.seed = 1;
  const auto ev = pipeline::run_evaluation(ck, data, ic);
  const double secs = seconds_since(t0);
  const auto& m = ev.metrics;
  return {m.auprc >= 0.95 && m.f1.anomaly_f1 >= 0.90 && secs <= 1800,
          fmt("AUPRC %.3f (>= 0.95), anomaly F1 %.3f (>= 0.90), %.0fs (<= 1800s)", m.auprc, m.f1.anomaly_f1, secs)};
}

Outcome cli_determinism() {
  const auto root = std::filesystem::temp_directory_path() / "caad-acceptance-cli";
  std::filesystem::remove_all(root);
  const std::vector<std::string> common{"--seed", "9", "--deterministic", "--set", "data.size=16", "--set",
                                        "data.train=40", "--set", "data.val=16", "--set", "data.test=24", "--set",
                                        "train.epochs=2"};
  std::string reports[2];
  for (int i = 0; i < 2; ++i) {
    const auto dir = root / std::to_string(i);
    for (std::vector<std::string> verb : {std::vector<std::string>{"data", "synth"}, {"train"}, {"calibrate"}, {"infer"}, {"eval"}}) {
      std::vector<std::string> args{"--run-dir", dir.string()};
      args.insert(args.end(), common.begin(), common.end());
      args.insert(args.end(), verb.begin(), verb.end());
      std::ostringstream out, err;
      if (cli::run(args, out, err) != 0) return {false, "caad " + verb[0] + " failed: " + err.str()};
    }
    std::ifstream in(dir / "metrics.json");
    std::stringstream ss;
    ss << in.rdbuf();
    reports[i] = ss.str();
  }
  std::filesystem::remove_all(root);
  return {!reports[0].empty() && reports[0] == reports[1],
          fmt("metric reports %s (%zu bytes)", reports[0] == reports[1] ? "identical" : "differ", reports[0].size())};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* key;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {"loss", "loss oracles", loss_oracles},
      {"gp", "gradient penalty analytics", gradient_penalty},
      {"votes", "vote arithmetic", vote_arithmetic},
      {"threshold", "threshold calibration", threshold_calibration},
      {"metrics", "metric oracles", metric_oracles},
      {"desk", "desk end-to-end hopper detection", end_to_end},
      {"ablation", "ablation direction full vs no_cl", ablation_direction},
      {"feedback", "feedback loop", feedback_loop},
      {"mnist", "MNIST one-class", mnist_protocol},
      {"determinism", "CLI determinism", cli_determinism},
  };
  std::vector<std::string> only(argv + 1, argv + argc);
  set_warning_sink([](std::string_view) {});
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.key) == only.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
