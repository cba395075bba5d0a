#include "caad/pipeline.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "caad/errors.hpp"

namespace caad::pipeline {

using nlohmann::json;
using nn::Index;
using nn::Tensor;
using spectral::DensityGrid;
using spectral::Grid;

void InferenceConfig::validate() const {
  require(mc_samples >= 2, Errc::ConfigError, "mc_samples must be >= 2");
  require(centroids >= 1, Errc::ConfigError, "centroids must be >= 1");
  require(phi > 0 && phi < 1, Errc::ConfigError, "phi must be in (0,1)");
  require(batch_size >= 1, Errc::ConfigError, "inference batch_size must be >= 1");
}

json to_json(const InferenceConfig& c) {
  return {{"mc_samples", c.mc_samples},
          {"centroids", c.centroids},
          {"phi", c.phi},
          {"agg", c.agg == detector::CentroidAgg::Max ? "max" : "min"},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

InferenceConfig inference_config_from_json(const json& j, InferenceConfig c) {
  require(j.is_object(), Errc::ConfigError, "inference config must be an object");
  for (const auto& [k, v] : j.items()) {
    try {
      if (k == "mc_samples") c.mc_samples = v.get<int>();
      else if (k == "centroids") c.centroids = v.get<std::size_t>();
      else if (k == "phi") c.phi = v.get<double>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "agg") {
        const auto a = v.get<std::string>();
        require(a == "max" || a == "min", Errc::ConfigError, "inference.agg must be max or min");
        c.agg = a == "max" ? detector::CentroidAgg::Max : detector::CentroidAgg::Min;
      } else {
        raise(Errc::ConfigError, "unknown config field inference." + k);
      }
    } catch (const json::exception&) {
      raise(Errc::ConfigError, "config field inference." + k + " has the wrong type");
    }
  }
  c.validate();
  return c;
}

namespace {

template <typename GetGrid>
Eigen::MatrixXd embed_impl(Critic<float>& critic, std::size_t n, GetGrid get, bool dropout_active, int batch_size) {
  require(n > 0, Errc::EmptyBatch, "nothing to embed");
  nn::NoGradGuard ng;
  const Grid& first = get(0);
  const Index h = first.rows(), w = first.cols(), px = h * w;
  Eigen::MatrixXd out(static_cast<Index>(n), critic.spec().embedding_dim);
  for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(batch_size)) {
    const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(batch_size), n - at);
    Tensor<float> x(nn::Shape{static_cast<Index>(len), 1, h, w});
    for (std::size_t i = 0; i < len; ++i) {
      const Grid& g = get(at + i);
      require(g.rows() == h && g.cols() == w, Errc::ShapeError, "grids differ in shape");
      std::copy_n(g.data(), px, x.data() + static_cast<Index>(i) * px);
    }
    const auto res = critic.forward(nn::Var<float>(x), dropout_active);
    const Tensor<float>& z = res.embeddings.value();
    const Index d = z.dim(1);
    for (std::size_t i = 0; i < len; ++i)
      for (Index j = 0; j < d; ++j) out(static_cast<Index>(at + i), j) = z[static_cast<Index>(i) * d + j];
  }
  return out;
}

}  // namespace

Eigen::MatrixXd embed(Critic<float>& critic, std::span<const Grid> grids, bool dropout_active, int batch_size) {
  return embed_impl(critic, grids.size(), [&](std::size_t i) -> const Grid& { return grids[i]; }, dropout_active,
                    batch_size);
}

Eigen::MatrixXd embed(Critic<float>& critic, std::span<const DensityGrid> grids, bool dropout_active, int batch_size) {
  return embed_impl(critic, grids.size(), [&](std::size_t i) -> const Grid& { return grids[i].values; }, dropout_active,
                    batch_size);
}

uq::MCEmbeddingSet mc_embed(Critic<float>& critic, std::span<const DensityGrid> grids, int k, std::uint64_t seed,
                            int batch_size) {
  require(k >= 2, Errc::ConfigError, "MC inference needs k >= 2");
  critic.reseed_dropout(seed);
  uq::MCEmbeddingSet set;
  for (int j = 0; j < k; ++j) set.samples.push_back(embed(critic, grids, true, batch_size));
  set.mean = uq::renormalized_mean(set.samples);
  return set;
}

namespace {

struct Scored {
  std::vector<std::vector<double>> sample_scores;  // [instance][pass]
  std::vector<double> mean_scores;
};

// Streams k passes so memory stays at one embedding matrix plus a running sum.
Scored score_passes(Critic<float>& critic, std::span<const DensityGrid> grids, const detector::CentroidBank& bank, int k,
                    bool mc, std::uint64_t seed, int batch_size) {
  Scored out;
  const std::size_t n = grids.size();
  out.sample_scores.assign(n, {});
  if (!mc) {
    const Eigen::MatrixXd z = embed(critic, grids, false, batch_size);
    out.mean_scores = detector::anomaly_scores(z, bank);
    for (std::size_t i = 0; i < n; ++i) out.sample_scores[i].assign(static_cast<std::size_t>(k), out.mean_scores[i]);
    return out;
  }
  critic.reseed_dropout(seed);
  Eigen::MatrixXd sum;
  for (int j = 0; j < k; ++j) {
    const Eigen::MatrixXd z = embed(critic, grids, true, batch_size);
    const auto s = detector::anomaly_scores(z, bank);
    for (std::size_t i = 0; i < n; ++i) out.sample_scores[i].push_back(s[i]);
    if (j == 0) sum = z;
    else sum += z;
  }
  sum.rowwise().normalize();
  out.mean_scores = detector::anomaly_scores(sum, bank);
  return out;
}

}  // namespace

Calibration calibrate(trainer::Model& model, const spectral::DatasetBundle& data, const InferenceConfig& cfg, bool no_uq) {
  cfg.validate();
  require(!data.val.empty(), Errc::EmptyInput, "calibration needs validation grids");
  std::vector<Grid> train;
  train.reserve(data.train.size());
  for (const auto& g : data.train) train.push_back(g.values);
  Critic<float>& critic = model.critic;
  detector::EmbedFn fn = [&](std::span<const Grid> grids) { return embed(critic, grids, false, cfg.batch_size); };
  Calibration cal;
  cal.bank = detector::fit_centroids(train, cfg.centroids, cfg.seed, fn, cfg.agg);
  cal.mc = !no_uq;
  cal.k = cfg.mc_samples;
  const Scored s = score_passes(critic, data.val, cal.bank, cfg.mc_samples, cal.mc, splitmix64(cfg.seed ^ 0xCA1), cfg.batch_size);
  std::vector<double> pooled;
  if (cal.mc) {
    for (const auto& v : s.sample_scores) pooled.insert(pooled.end(), v.begin(), v.end());
  } else {
    pooled = s.mean_scores;
  }
  cal.threshold = detector::calibrate_threshold(pooled, cfg.phi);
  return cal;
}

std::vector<uq::UncertaintyRecord> infer(trainer::Model& model, std::span<const DensityGrid> grids, const Calibration& cal,
                                         const InferenceConfig& cfg, bool no_uq) {
  cfg.validate();
  require(!grids.empty(), Errc::EmptyInput, "inference needs grids");
  const bool mc = !no_uq;
  const Scored s = score_passes(model.critic, grids, cal.bank, cfg.mc_samples, mc, splitmix64(cfg.seed ^ 0x1F3),
                                cfg.batch_size);
  std::vector<uq::UncertaintyRecord> out;
  out.reserve(grids.size());
  for (std::size_t i = 0; i < grids.size(); ++i) {
    auto r = uq::vote_and_score(grids[i].id, s.sample_scores[i], cal.threshold.theta, s.mean_scores[i]);
    out.push_back(std::move(r));
  }
  return out;
}

std::map<std::string, int> truth_labels(std::span<const DensityGrid> grids) {
  std::map<std::string, int> out;
  for (const auto& g : grids) out[g.id] = g.label == spectral::Label::Anomaly ? 1 : 0;
  return out;
}

evalkit::MetricsReport evaluate(std::span<const uq::UncertaintyRecord> records, std::span<const DensityGrid> grids,
                                const std::set<std::string>& exclude) {
  const auto truth = truth_labels(grids);
  std::vector<double> scores;
  std::vector<int> preds, labels;
  for (const auto& r : records) {
    if (exclude.count(r.instance_id)) continue;
    auto it = truth.find(r.instance_id);
    if (it == truth.end()) raise(Errc::NotFound, "no ground truth for " + r.instance_id);
    scores.push_back(r.score);
    preds.push_back(r.prediction);
    labels.push_back(it->second);
  }
  return evalkit::evaluate(scores, preds, labels);
}

Evaluation run_evaluation(const trainer::Checkpoint& ckpt, const spectral::DatasetBundle& data, const InferenceConfig& cfg) {
  auto model = trainer::load_model(ckpt);
  const bool no_uq = ckpt.config.ablation.no_uq;
  Evaluation e;
  e.calibration = calibrate(*model, data, cfg, no_uq);
  e.calibration.checkpoint_id = ckpt.id;
  e.records = infer(*model, data.test, e.calibration, cfg, no_uq);
  e.metrics = evaluate(e.records, data.test);
  return e;
}

// ---- serialization ----

namespace {

json grid_json(const Grid& g) {
  return {{"rows", g.rows()}, {"cols", g.cols()}, {"values", std::vector<float>(g.data(), g.data() + g.size())}};
}

Grid grid_from(const json& j) {
  const auto rows = j.at("rows").get<Index>(), cols = j.at("cols").get<Index>();
  const auto v = j.at("values").get<std::vector<float>>();
  require(static_cast<Index>(v.size()) == rows * cols, Errc::CorruptInput, "grid payload size mismatch");
  Grid g(rows, cols);
  std::copy(v.begin(), v.end(), g.data());
  return g;
}

}  // namespace

json to_json(const Calibration& c) {
  json centroids = json::array();
  for (const auto& g : c.bank.centroids) centroids.push_back(grid_json(g));
  json emb = json::array();
  for (Index i = 0; i < c.bank.centroid_embeddings.rows(); ++i) {
    std::vector<double> row(c.bank.centroid_embeddings.cols());
    for (Index j = 0; j < c.bank.centroid_embeddings.cols(); ++j) row[static_cast<std::size_t>(j)] = c.bank.centroid_embeddings(i, j);
    emb.push_back(row);
  }
  const auto& t = c.threshold;
  return {{"format", "caad-calibration/1"},
          {"checkpoint_id", c.checkpoint_id},
          {"theta", t.theta},
          {"phi", t.phi},
          {"n", t.n},
          {"fraction_below", t.fraction_below},
          {"m", c.bank.m()},
          {"agg", c.bank.agg == detector::CentroidAgg::Max ? "max" : "min"},
          {"mc", c.mc},
          {"k", c.k},
          {"histogram", {{"lo", t.hist.lo}, {"hi", t.hist.hi}, {"counts", t.hist.counts}}},
          {"centroids", centroids},
          {"centroid_embeddings", emb}};
}

Calibration calibration_from_json(const json& j) {
  Calibration c;
  try {
    if (j.value("format", "") != "caad-calibration/1") raise(Errc::CorruptInput, "unsupported calibration format");
    c.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    c.threshold.theta = j.at("theta").get<double>();
    c.threshold.phi = j.at("phi").get<double>();
    c.threshold.n = j.at("n").get<std::size_t>();
    c.threshold.fraction_below = j.at("fraction_below").get<double>();
    c.threshold.hist.lo = j.at("histogram").at("lo").get<double>();
    c.threshold.hist.hi = j.at("histogram").at("hi").get<double>();
    c.threshold.hist.counts = j.at("histogram").at("counts").get<std::vector<std::size_t>>();
    c.bank.agg = j.at("agg").get<std::string>() == "min" ? detector::CentroidAgg::Min : detector::CentroidAgg::Max;
    c.mc = j.at("mc").get<bool>();
    c.k = j.at("k").get<int>();
    for (const auto& g : j.at("centroids")) c.bank.centroids.push_back(grid_from(g));
    const auto& emb = j.at("centroid_embeddings");
    const Index m = static_cast<Index>(emb.size());
    const Index d = m ? static_cast<Index>(emb[0].size()) : 0;
    c.bank.centroid_embeddings.resize(m, d);
    for (Index i = 0; i < m; ++i) {
      const auto row = emb[static_cast<std::size_t>(i)].get<std::vector<double>>();
      require(static_cast<Index>(row.size()) == d, Errc::CorruptInput, "ragged centroid embeddings");
      for (Index k = 0; k < d; ++k) c.bank.centroid_embeddings(i, k) = row[static_cast<std::size_t>(k)];
    }
  } catch (const json::exception& e) {
    raise(Errc::CorruptInput, std::string("calibration: ") + e.what());
  }
  return c;
}

void save_calibration(const std::filesystem::path& path, const Calibration& cal) {
  std::ofstream f(path);
  if (!f) raise(Errc::IoError, "cannot write " + path.string());
  f << to_json(cal).dump(1) << '\n';
}

Calibration load_calibration(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) raise(Errc::NotFound, "no calibration at " + path.string());
  try {
    return calibration_from_json(json::parse(f));
  } catch (const json::parse_error& e) {
    raise(Errc::CorruptInput, std::string("calibration: ") + e.what());
  }
}

json to_json(const uq::UncertaintyRecord& r) {
  return {{"id", r.instance_id}, {"score", r.score},     {"mu", r.mu},
          {"certainty", r.certainty}, {"prediction", r.prediction}, {"votes", {r.u0, r.u1}}};
}

uq::UncertaintyRecord record_from_json(const json& j) {
  uq::UncertaintyRecord r;
  r.instance_id = j.at("id").get<std::string>();
  r.score = j.at("score").get<double>();
  r.mu = j.at("mu").get<double>();
  r.certainty = j.at("certainty").get<double>();
  r.prediction = j.at("prediction").get<int>();
  r.u0 = j.at("votes").at(0).get<int>();
  r.u1 = j.at("votes").at(1).get<int>();
  return r;
}

void write_records(const std::filesystem::path& path, std::span<const uq::UncertaintyRecord> records) {
  std::ofstream f(path);
  if (!f) raise(Errc::IoError, "cannot write " + path.string());
  for (const auto& r : records) f << to_json(r).dump() << '\n';
}

std::vector<uq::UncertaintyRecord> read_records(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) raise(Errc::NotFound, "no inference report at " + path.string());
  std::vector<uq::UncertaintyRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      raise(Errc::CorruptInput, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace caad::pipeline
