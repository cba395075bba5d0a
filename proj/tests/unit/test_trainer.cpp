#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "caad/errors.hpp"
#include "caad/pipeline.hpp"
#include "caad/trainer.hpp"
#include "../support/tiny.hpp"

using namespace caad;
using trainer::TrainConfig;

namespace {

TrainConfig tiny_config(std::uint64_t seed = 1) { return tiny::config(seed); }

spectral::DatasetBundle tiny_data(std::size_t n_train = 4, std::uint64_t seed = 2) { return tiny::data(n_train, seed); }

std::filesystem::path temp_dir(const std::string& name) { return tiny::temp_dir(name); }

nn::Tensor<float> eval_scores(trainer::Model& m, const nn::Tensor<float>& x) {
  nn::NoGradGuard ng;
  return m.critic.forward(nn::Var<float>(x), false).scores.value();
}

}  // namespace

TEST_CASE("smoke: one epoch on four grids writes a checkpoint") {
  const auto data = tiny_data();
  const auto dir = temp_dir("smoke");
  trainer::RunOptions opts;
  opts.checkpoint_dir = dir;
  const auto ck = trainer::train_caad(data, tiny_config(), opts);
  REQUIRE(ck.history.size() == 1);
  const auto& e = ck.history[0];
  CHECK(e.steps == 2);
  CHECK(std::isfinite(e.critic));
  CHECK(std::isfinite(e.penalty));
  CHECK(std::isfinite(e.supcon));
  CHECK(ck.epoch == 1);
  CHECK(ck.data_hash == spectral::bundle_hash(data));
  CHECK(std::filesystem::exists(dir / "params.bin"));
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  CHECK(std::filesystem::exists(dir / "losses.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("fixed seed gives identical loss curves and weights") {
  const auto data = tiny_data(6);
  auto cfg = tiny_config(5);
  cfg.epochs = 2;
  const auto a = trainer::train_caad(data, cfg);
  const auto b = trainer::train_caad(data, cfg);
  REQUIRE(a.history.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.history[i].critic == b.history[i].critic);
    CHECK(a.history[i].generator == b.history[i].generator);
  }
  CHECK(a.id == b.id);
  cfg.seed = 6;
  CHECK(trainer::train_caad(data, cfg).id != a.id);
}

TEST_CASE("with alpha=0 and lambda=0 a critic step is a plain Wasserstein step") {
  const auto data = tiny_data(2);
  auto cfg = tiny_config(9);
  cfg.critic.dropout = 0.0;
  cfg.loss.alpha = 0;
  cfg.loss.lambda = 0;
  cfg.critic_steps_per_gen_step = 1000;  // no generator update in this epoch
  const auto ck = trainer::train_caad(data, cfg);

  trainer::Model ref(cfg, cfg.seed);
  const auto real = spectral::stack(std::span<const spectral::DensityGrid>(data.train));
  nn::Tensor<float> fake;
  {
    nn::NoGradGuard ng;
    fake = ref.generator.forward(nn::Var<float>(real), true).value();
  }
  nn::Adam<float> opt(ref.critic.parameters(), {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8});
  auto sr = ref.critic.forward(nn::Var<float>(real), false).scores;
  auto sf = ref.critic.forward(nn::Var<float>(fake), false).scores;
  nn::backward(nn::sub(nn::mean_all(sf), nn::mean_all(sr)));
  opt.step();
  const std::map<std::string, nn::Tensor<float>> trained(ck.state.begin(), ck.state.end());
  for (auto& e : export_state(ref.critic, "critic.")) {
    const auto& got = trained.at(e.first);
    REQUIRE(got.size() == e.second.size());
    for (nn::Index i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(e.second[i]).epsilon(1e-5).scale(1e-6));
  }
}

TEST_CASE("checkpoint round trip is bit-identical in eval mode") {
  const auto data = tiny_data();
  const auto ck = trainer::train_caad(data, tiny_config(3));
  const auto dir = temp_dir("roundtrip");
  trainer::save_checkpoint(dir, ck);
  const auto back = trainer::load_checkpoint(dir);
  CHECK(back.id == ck.id);
  CHECK(back.epoch == ck.epoch);
  CHECK(back.history.size() == ck.history.size());
  CHECK(trainer::to_json(back.config) == trainer::to_json(ck.config));
  auto m1 = trainer::load_model(ck);
  auto m2 = trainer::load_model(back);
  const auto x = spectral::stack(std::span<const spectral::DensityGrid>(data.test));
  const auto s1 = eval_scores(*m1, x), s2 = eval_scores(*m2, x);
  for (nn::Index i = 0; i < s1.size(); ++i) CHECK(s1[i] == s2[i]);
  nn::NoGradGuard ng;
  const auto g1 = m1->generator.forward(nn::Var<float>(x), false).value();
  const auto g2 = m2->generator.forward(nn::Var<float>(x), false).value();
  for (nn::Index i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("retraining") {
  const auto data = tiny_data();
  const auto ck = trainer::train_caad(data, tiny_config(4));
  const auto hash = spectral::bundle_hash(data);
  trainer::FeedbackSets fb;
  for (std::size_t i = 0; i < 2; ++i) {
    fb.benign.push_back(data.test[i].values);
    fb.anomaly.push_back(data.test[2 + i].values);
  }

  SUBCASE("zero epochs returns the input") {
    trainer::RetrainConfig rc(ck.config, 0);
    const auto same = trainer::retrain_caad_ef(ck, data, fb, rc);
    CHECK(same.id == ck.id);
    CHECK(same.epoch == ck.epoch);
  }
  SUBCASE("feedback epochs extend the history and leave the data alone") {
    trainer::RetrainConfig rc(ck.config, 2);
    const auto r = trainer::retrain_caad_ef(ck, data, fb, rc);
    CHECK(r.parent_id == ck.id);
    CHECK(r.epoch == ck.epoch + 2);
    CHECK(r.history.size() == 3);
    CHECK(r.history.back().hil > 0);
    CHECK(r.feedback_count == 4);
    CHECK(spectral::bundle_hash(data) == hash);
  }
  SUBCASE("no HIL anomalies still runs") {
    trainer::FeedbackSets only_benign;
    only_benign.benign = fb.benign;
    trainer::RetrainConfig rc(ck.config, 1);
    const auto r = trainer::retrain_caad_ef(ck, data, only_benign, rc);
    CHECK(std::isfinite(r.history.back().hil));
  }
  SUBCASE("empty feedback warns") {
    std::string seen;
    auto prev = set_warning_sink([&](std::string_view m) { seen = m; });
    trainer::RetrainConfig rc(ck.config, 1);
    const auto r = trainer::retrain_caad_ef(ck, data, {}, rc);
    set_warning_sink(prev);
    CHECK(!seen.empty());
    CHECK(r.history.back().hil == 0.0);
  }
}

TEST_CASE("a NaN loss aborts with the last good checkpoint") {
  auto data = tiny_data();
  data.train[1].values(0, 0) = NAN;
  auto cfg = tiny_config(2);
  cfg.epochs = 2;
  try {
    trainer::train_caad(data, cfg);
    FAIL("expected an abort");
  } catch (const trainer::TrainingAborted& e) {
    CHECK(e.code() == Errc::AbortNaN);
    CHECK(e.last_good().epoch == 0);
    CHECK(!e.last_good().state.empty());
  }
}

TEST_CASE("ablation flags") {
  const TrainConfig base;
  const auto same = trainer::ablate(base, {});
  CHECK(trainer::to_json(same) == trainer::to_json(base));
  const auto nocl = trainer::ablate(base, {true, false, false, false});
  CHECK(nocl.loss.alpha == 0.0);
  CHECK(nocl.ablation.label() == "no_cl");
  const auto both = trainer::ablate(base, {false, false, true, true});
  CHECK(!both.generator.skip_connections);
  CHECK(both.ablation.label() == "no_unet+no_wgan_gp");
  auto data = tiny_data();
  auto cfg = trainer::ablate(tiny_config(), {false, false, true, true});
  const auto ck = trainer::train_caad(data, cfg);
  CHECK(ck.history[0].penalty == 0.0);
  CHECK(std::isfinite(ck.history[0].critic));
}

TEST_CASE("training config json") {
  TrainConfig c;
  c.loss.tau = 0.2;
  c.ablation.no_uq = true;
  c.transform.kind = transforms::NegativeTransformConfig::Kind::Rot90;
  const auto back = trainer::train_config_from_json(trainer::to_json(c));
  CHECK(trainer::to_json(back) == trainer::to_json(c));
  const auto partial = trainer::train_config_from_json(nlohmann::json{{"epochs", 3}, {"loss", {{"alpha", 0.5}}}});
  CHECK(partial.epochs == 3);
  CHECK(partial.loss.alpha == 0.5);
  CHECK(partial.batch_size == 32);
  CHECK_THROWS_AS(trainer::train_config_from_json(nlohmann::json{{"epoch", 3}}), Error);
  CHECK_THROWS_AS(trainer::train_config_from_json(nlohmann::json{{"lr", "fast"}}), Error);
  TrainConfig bad;
  bad.lr = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  trainer::RetrainConfig r;
  CHECK(r.epochs == 7);
  CHECK(r.h_percent == 5);
  r.h_percent = 0;
  CHECK_THROWS_AS(r.validate(), Error);
}

// ---- inference ----

TEST_CASE("MC embeddings") {
  const auto data = tiny_data();
  auto cfg = tiny_config();
  SUBCASE("dropout off collapses the samples") {
    cfg.critic.dropout = 0.0;
    trainer::Model m(cfg, 1);
    const auto set = pipeline::mc_embed(m.critic, data.test, 4, 7);
    CHECK(set.k() == 4);
    for (const auto& s : set.samples) CHECK((s - set.samples[0]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((set.mean - set.samples[0]).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("dropout on differs between samples and is seeded") {
    trainer::Model m(cfg, 1);
    const auto a = pipeline::mc_embed(m.critic, data.test, 3, 7);
    const auto b = pipeline::mc_embed(m.critic, data.test, 3, 7);
    CHECK((a.samples[0] - a.samples[1]).cwiseAbs().maxCoeff() > 0);
    CHECK(a.samples[2] == b.samples[2]);
    for (Eigen::Index i = 0; i < a.mean.rows(); ++i) CHECK(a.mean.row(i).norm() == doctest::Approx(1.0));
    CHECK_THROWS_AS(pipeline::mc_embed(m.critic, data.test, 1, 7), Error);
  }
  SUBCASE("eval pass is deterministic and unit norm") {
    trainer::Model m(cfg, 1);
    const auto a = pipeline::embed(m.critic, data.test, false), b = pipeline::embed(m.critic, data.test, false);
    CHECK(a == b);
    for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).norm() - 1.0) < 1e-5);
  }
}

TEST_CASE("calibrate, infer and evaluate on a tiny model") {
  const auto data = tiny_data(6);
  const auto ck = trainer::train_caad(data, tiny_config(8));
  pipeline::InferenceConfig ic;
  ic.mc_samples = 4;
  auto model = trainer::load_model(ck);
  const auto cal = pipeline::calibrate(*model, data, ic, false);
  CHECK(cal.threshold.n == data.val.size() * 4);
  const auto recs = pipeline::infer(*model, data.test, cal, ic, false);
  REQUIRE(recs.size() == data.test.size());
  for (const auto& r : recs) {
    CHECK(r.u0 + r.u1 == 4);
    CHECK(r.mu == uq::uncertainty(r.u0, r.u1));
  }
  const auto det = pipeline::infer(*model, data.test, cal, ic, true);
  for (const auto& r : det) CHECK(r.mu == 0.0);

  const auto dir = temp_dir("inference");
  std::filesystem::create_directories(dir);
  pipeline::write_records(dir / "r.jsonl", recs);
  const auto back = pipeline::read_records(dir / "r.jsonl");
  REQUIRE(back.size() == recs.size());
  CHECK(back[3].instance_id == recs[3].instance_id);
  CHECK(back[3].score == recs[3].score);
  CHECK(back[3].u1 == recs[3].u1);
  pipeline::save_calibration(dir / "c.json", cal);
  const auto cal2 = pipeline::load_calibration(dir / "c.json");
  CHECK(cal2.threshold.theta == cal.threshold.theta);
  CHECK(cal2.bank.centroids[0] == cal.bank.centroids[0]);
  CHECK(cal2.bank.centroid_embeddings == cal.bank.centroid_embeddings);
  std::filesystem::remove_all(dir);

  std::set<std::string> drop{recs[0].instance_id};
  const auto labels = pipeline::truth_labels(data.test);
  bool both = false;
  {
    int pos = 0;
    for (const auto& [id, l] : labels) pos += l;
    both = pos > 0 && pos < static_cast<int>(labels.size());
  }
  if (both) {
    const auto full = pipeline::evaluate(recs, data.test);
    CHECK(full.f1.n_benign + full.f1.n_anomaly == recs.size());
    const auto filtered = pipeline::evaluate(recs, data.test, drop);
    CHECK(filtered.f1.n_benign + filtered.f1.n_anomaly == recs.size() - 1);
  }
}
