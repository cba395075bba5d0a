#include "caad/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "caad/nn/serialize.hpp"
#include "caad/rng.hpp"

namespace caad::trainer {

using nlohmann::json;
using nn::Index;
using nn::Tensor;
using nn::Var;

std::string Ablation::label() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += name;
  };
  add(no_cl, "no_cl");
  add(no_uq, "no_uq");
  add(no_unet, "no_unet");
  add(no_wgan_gp, "no_wgan_gp");
  return s.empty() ? "full" : s;
}

void TrainConfig::validate() const {
  require(epochs >= 0, Errc::ConfigError, "epochs must be >= 0");
  require(batch_size >= 2, Errc::ConfigError, "batch_size must be >= 2 (generator batch norm)");
  require(lr > 0, Errc::ConfigError, "lr must be > 0");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, Errc::ConfigError,
          "adam betas must be in [0,1)");
  require(critic_steps_per_gen_step >= 1, Errc::ConfigError, "critic_steps_per_gen_step must be >= 1");
  require(generator.height == critic.height && generator.width == critic.width, Errc::ConfigError,
          "generator and critic image sizes differ");
  loss.validate();
  transform.validate();
}

void RetrainConfig::validate() const {
  TrainConfig::validate();
  require(h_percent > 0 && h_percent <= 100, Errc::ConfigError, "h_percent must be in (0,100]");
}

TrainConfig ablate(TrainConfig cfg, const Ablation& flags) {
  cfg.ablation = flags;
  if (flags.no_cl) cfg.loss.alpha = 0;
  if (flags.no_unet) cfg.generator.skip_connections = false;
  return cfg;
}

Model::Model(const TrainConfig& cfg, std::uint64_t seed)
    : generator(cfg.generator, splitmix64(seed ^ 0x6E4)), critic(cfg.critic, splitmix64(seed ^ 0xC71)) {}

StateDict export_model(Model& model) {
  StateDict out = export_state(model.generator, "generator.");
  for (auto& e : export_state(model.critic, "critic.")) out.push_back(std::move(e));
  return out;
}

std::unique_ptr<Model> load_model(const Checkpoint& ckpt) {
  auto model = std::make_unique<Model>(ckpt.config, ckpt.config.seed);
  const std::map<std::string, Tensor<float>> entries(ckpt.state.begin(), ckpt.state.end());
  import_state(model->generator, "generator.", entries);
  import_state(model->critic, "critic.", entries);
  return model;
}

namespace {

std::string state_id(const StateDict& state, int epoch, const std::string& parent) {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto& [name, t] : state) {
    crc = crc32(crc, reinterpret_cast<const Bytef*>(name.data()), static_cast<uInt>(name.size()));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(t.data()), static_cast<uInt>(t.size() * sizeof(float)));
  }
  const std::string tail = std::to_string(epoch) + parent;
  crc = crc32(crc, reinterpret_cast<const Bytef*>(tail.data()), static_cast<uInt>(tail.size()));
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt-%08lx", static_cast<unsigned long>(crc));
  return buf;
}

Tensor<float> gather_rows(const Tensor<float>& all, std::span<const std::size_t> rows) {
  nn::Shape shape = all.shape();
  const Index per = all.size() / shape[0];
  shape[0] = static_cast<Index>(rows.size());
  Tensor<float> out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(all.data() + static_cast<Index>(rows[i]) * per, per, out.data() + static_cast<Index>(i) * per);
  return out;
}

Tensor<float> concat_rows(std::initializer_list<const Tensor<float>*> parts) {
  const Tensor<float>* first = nullptr;
  Index n = 0;
  for (const auto* p : parts)
    if (!p->empty()) {
      if (!first) first = p;
      n += p->dim(0);
    }
  nn::Shape shape = first->shape();
  shape[0] = n;
  Tensor<float> out(shape);
  Index at = 0;
  for (const auto* p : parts) {
    if (p->empty()) continue;
    std::copy_n(p->data(), p->size(), out.data() + at);
    at += p->size();
  }
  return out;
}

Tensor<float> stack_grids(const std::vector<spectral::Grid>& grids) {
  if (grids.empty()) return {};
  const Index h = grids.front().rows(), w = grids.front().cols();
  Tensor<float> out(nn::Shape{static_cast<Index>(grids.size()), 1, h, w});
  for (std::size_t i = 0; i < grids.size(); ++i) {
    require(grids[i].rows() == h && grids[i].cols() == w, Errc::ShapeError, "feedback grids differ in shape");
    std::copy_n(grids[i].data(), h * w, out.data() + static_cast<Index>(i) * h * w);
  }
  return out;
}

Eigen::MatrixXd rows_of(const Tensor<float>& z, Index start, Index count) {
  const Index d = z.dim(1);
  Eigen::MatrixXd out(count, d);
  for (Index i = 0; i < count; ++i)
    for (Index j = 0; j < d; ++j) out(i, j) = z[(start + i) * d + j];
  return out;
}

void add_rows(Tensor<float>& g, Index start, const Eigen::MatrixXd& m, double weight) {
  const Index d = g.dim(1);
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < d; ++j) g[(start + i) * d + j] += static_cast<float>(weight * m(i, j));
}

double mean_of(const Tensor<float>& t, Index start, Index count) {
  double s = 0;
  for (Index i = start; i < start + count; ++i) s += t[i];
  return s / static_cast<double>(count);
}

std::vector<double> to_doubles(const Tensor<float>& t, Index start, Index count) {
  std::vector<double> out(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = t[start + i];
  return out;
}

struct Accum {
  EpochLosses e;
  long gen_steps = 0;
  void finish() {
    if (e.steps > 0) {
      const double n = static_cast<double>(e.steps);
      e.critic /= n;
      e.wasserstein /= n;
      e.penalty /= n;
      e.supcon /= n;
      e.hil /= n;
    }
    if (gen_steps > 0) e.generator /= static_cast<double>(gen_steps);
  }
};

// Shared loop for fresh training and feedback retraining.
Checkpoint run(Model& model, Checkpoint base, const spectral::DatasetBundle& data, const TrainConfig& cfg,
               const FeedbackSets* feedback, const RunOptions& opts) {
  require(!data.train.empty(), Errc::EmptyInput, "training split is empty");
  for (const auto& g : data.train)
    require(g.label != spectral::Label::Anomaly, Errc::ConfigError, "training split must be benign-only; " + g.id + " is not");
  require(data.rows() == cfg.critic.height && data.cols() == cfg.critic.width, Errc::ConfigError,
          "dataset grids are " + std::to_string(data.rows()) + "x" + std::to_string(data.cols()) + ", model expects " +
              std::to_string(cfg.critic.height) + "x" + std::to_string(cfg.critic.width));

  const auto& L = cfg.loss;
  const bool wgan = !cfg.ablation.no_wgan_gp;
  const bool hil = feedback && !feedback->empty();
  const bool need_aug = L.alpha > 0 || hil;

  nn::Adam<float> opt_c(model.critic.parameters(), {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8});
  nn::Adam<float> opt_g(model.generator.parameters(), {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8});
  const std::uint64_t stream = static_cast<std::uint64_t>(base.epoch) * 0x1000 + base.feedback_count;
  Rng order_rng = derive_rng(cfg.seed, 0x0D3 + stream);
  Rng aug_rng = derive_rng(cfg.seed, 0xA06 + stream);
  Rng gp_rng = derive_rng(cfg.seed, 0x69 + stream);
  model.critic.reseed_dropout(splitmix64(cfg.seed + 0xD0 + stream));

  const Tensor<float> train = spectral::stack(std::span<const spectral::DensityGrid>(data.train));
  const Tensor<float> ben = hil ? stack_grids(feedback->benign) : Tensor<float>();
  const Tensor<float> anom = hil ? stack_grids(feedback->anomaly) : Tensor<float>();
  const Index nb = ben.empty() ? 0 : ben.dim(0), na = anom.empty() ? 0 : anom.dim(0);

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  Checkpoint last_good = base;
  long step = 0;
  auto critic_fn = [&](const Var<float>& x) { return model.critic.forward(x, true).scores; };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), order_rng);
    Accum acc;
    acc.e.epoch = base.epoch + 1;
    for (std::size_t at = 0; at < order.size(); at += bs) {
      const std::size_t len = std::min(bs, order.size() - at);
      if (len < 2) break;  // batch norm needs two samples
      const Tensor<float> real = gather_rows(train, std::span(order).subspan(at, len));
      const auto b = static_cast<Index>(len);
      Tensor<float> fake;
      {
        nn::NoGradGuard ng;
        fake = model.generator.forward(Var<float>(real), true).value();
      }
      const Tensor<float> aug = need_aug ? transforms::transform_batch(real, cfg.transform, aug_rng) : Tensor<float>();
      const Tensor<float> input = concat_rows({&real, &fake, &aug, &ben, &anom});
      const Index na_rows = aug.empty() ? 0 : b;
      const Index off_aug = 2 * b, off_ben = off_aug + na_rows, off_anom = off_ben + nb;

      auto out = model.critic.forward(Var<float>(input), true);
      const Tensor<float>& s = out.scores.value();
      const Tensor<float>& z = out.embeddings.value();
      if (!s.flat().allFinite() || !z.flat().allFinite()) {
        if (opts.checkpoint_dir) save_checkpoint(*opts.checkpoint_dir, last_good);
        throw TrainingAborted("non-finite critic output at epoch " + std::to_string(acc.e.epoch) + ", step " +
                                  std::to_string(step),
                              last_good);
      }
      Tensor<float> ds(s.shape()), dz(z.shape());

      double adv = 0;
      if (wgan) {
        adv = mean_of(s, 0, b) - mean_of(s, b, b);
        for (Index i = 0; i < b; ++i) {
          ds[i] = -1.0f / static_cast<float>(b);
          ds[b + i] = 1.0f / static_cast<float>(b);
        }
      } else {
        std::vector<double> gr, gf;
        const double lr_ = objectives::bce_with_logits(to_doubles(s, 0, b), 1.0, &gr);
        const double lf_ = objectives::bce_with_logits(to_doubles(s, b, b), 0.0, &gf);
        adv = -(lr_ + lf_);  // stored so that critic loss = -adv as in the Wasserstein case
        for (Index i = 0; i < b; ++i) {
          ds[i] = static_cast<float>(gr[static_cast<std::size_t>(i)]);
          ds[b + i] = static_cast<float>(gf[static_cast<std::size_t>(i)]);
        }
      }

      double supcon = 0;
      if (L.alpha > 0) {
        Eigen::MatrixXd zc(2 * b, z.dim(1));
        zc.topRows(b) = rows_of(z, 0, b);
        zc.bottomRows(b) = rows_of(z, off_aug, b);
        std::vector<int> labels(static_cast<std::size_t>(2 * b), 0);
        std::fill(labels.begin() + b, labels.end(), 1);
        const auto r = objectives::supcon_with_grad(zc, labels, std::nullopt, L.tau);
        supcon = r.loss;
        add_rows(dz, 0, r.grad.topRows(b), L.alpha);
        add_rows(dz, off_aug, r.grad.bottomRows(b), L.alpha);
      }

      double hil_total = 0;
      if (hil) {
        const auto parts = objectives::hil_loss(rows_of(z, 0, b), rows_of(z, off_aug, b), rows_of(z, off_ben, nb),
                                                rows_of(z, off_anom, na), L);
        hil_total = parts.total;
        add_rows(dz, 0, parts.grad_x, 1.0);
        add_rows(dz, off_aug, parts.grad_xaug, 1.0);
        add_rows(dz, off_ben, parts.grad_ben, 1.0);
        add_rows(dz, off_anom, parts.grad_anom, 1.0);
      }

      {
        const Var<float> outs[] = {out.scores, out.embeddings};
        const Tensor<float> seeds[] = {ds, dz};
        nn::backward<float>(outs, seeds);
      }

      double penalty = 0;
      if (wgan && L.lambda > 0) {
        Var<float> pen = objectives::gradient_penalty<float>(critic_fn, real, fake, L.lambda, gp_rng);
        penalty = pen.value()[0];
        nn::backward(pen);
      }

      objectives::CriticLossParts parts{adv, penalty, supcon, hil_total};
      const double total = objectives::retrain_loss(parts, L);
      if (!std::isfinite(total)) {
        if (opts.checkpoint_dir) save_checkpoint(*opts.checkpoint_dir, last_good);
        throw TrainingAborted("non-finite critic loss at epoch " + std::to_string(acc.e.epoch) + ", step " +
                                  std::to_string(step),
                              last_good);
      }
      opt_c.step();
      acc.e.critic += total;
      acc.e.wasserstein += adv;
      acc.e.penalty += penalty;
      acc.e.supcon += supcon;
      acc.e.hil += hil_total;
      ++acc.e.steps;
      ++step;

      if (step % cfg.critic_steps_per_gen_step == 0) {
        Var<float> x(real);
        Var<float> g = model.generator.forward(x, true);
        Var<float> sg = model.critic.forward(g, true).scores;
        Tensor<float> seed(sg.shape());
        double gl = 0;
        if (wgan) {
          gl = -mean_of(sg.value(), 0, b);
          seed.flat().setConstant(-1.0f / static_cast<float>(b));
        } else {
          std::vector<double> gg;
          gl = objectives::bce_with_logits(to_doubles(sg.value(), 0, b), 1.0, &gg);
          for (Index i = 0; i < b; ++i) seed[i] = static_cast<float>(gg[static_cast<std::size_t>(i)]);
        }
        std::vector<Var<float>> outs{sg};
        std::vector<Tensor<float>> seeds{seed};
        if (L.beta > 0) {
          Var<float> d = nn::sub(g, x);
          Var<float> mse = nn::scale(nn::mean_all(nn::mul(d, d)), static_cast<float>(L.beta));
          gl += mse.value()[0];
          outs.push_back(mse);
          seeds.emplace_back(mse.shape(), 1.0f);
        }
        if (!std::isfinite(gl)) {
          if (opts.checkpoint_dir) save_checkpoint(*opts.checkpoint_dir, last_good);
          throw TrainingAborted("non-finite generator loss at epoch " + std::to_string(acc.e.epoch), last_good);
        }
        nn::backward<float>(outs, seeds);
        opt_g.step();
        opt_c.zero_grad();
        acc.e.generator += gl;
        ++acc.gen_steps;
      }
    }
    acc.finish();
    base.history.push_back(acc.e);
    base.epoch = acc.e.epoch;
    base.state = export_model(model);
    base.id = state_id(base.state, base.epoch, base.parent_id);
    last_good = base;
    if (opts.checkpoint_dir) save_checkpoint(*opts.checkpoint_dir, base);
    if (opts.on_epoch) opts.on_epoch(acc.e);
  }
  return base;
}

}  // namespace

Checkpoint train_caad(const spectral::DatasetBundle& data, const TrainConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  Model model(cfg, cfg.seed);
  Checkpoint base;
  base.config = cfg;
  base.data_hash = spectral::bundle_hash(data);
  base.state = export_model(model);
  base.id = state_id(base.state, 0, "");
  return run(model, std::move(base), data, cfg, nullptr, opts);
}

Checkpoint retrain_caad_ef(const Checkpoint& ckpt, const spectral::DatasetBundle& data, const FeedbackSets& feedback,
                           const RetrainConfig& cfg, const RunOptions& opts) {
  if (cfg.epochs == 0) return ckpt;
  cfg.validate();
  if (feedback.empty()) warn("retraining with empty feedback; the HIL term is skipped");
  auto model = load_model(ckpt);
  TrainConfig run_cfg = cfg;
  // Architecture always comes from the checkpoint.
  run_cfg.generator = ckpt.config.generator;
  run_cfg.critic = ckpt.config.critic;
  Checkpoint base = ckpt;
  base.parent_id = ckpt.id;
  base.feedback_count = feedback.benign.size() + feedback.anomaly.size();
  base.data_hash = spectral::bundle_hash(data);
  return run(*model, std::move(base), data, run_cfg, &feedback, opts);
}

// ---- config json ----

namespace {

void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  require(j.is_object(), Errc::ConfigError, where + " must be an object");
  std::set<std::string> ok(known.begin(), known.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) raise(Errc::ConfigError, "unknown config field " + where + (where.empty() ? "" : ".") + k);
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    raise(Errc::ConfigError, "config field " + where + (where.empty() ? "" : ".") + key + " has the wrong type");
  }
}

}  // namespace

json to_json(const TrainConfig& c) {
  const bool rot = c.transform.kind == transforms::NegativeTransformConfig::Kind::Rot90;
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"critic_steps_per_gen_step", c.critic_steps_per_gen_step},
          {"seed", c.seed},
          {"loss",
           {{"lambda", c.loss.lambda},
            {"alpha", c.loss.alpha},
            {"tau", c.loss.tau},
            {"alpha1", c.loss.alpha1},
            {"alpha2", c.loss.alpha2},
            {"alpha3", c.loss.alpha3},
            {"beta", c.loss.beta}}},
          {"ablation",
           {{"no_cl", c.ablation.no_cl},
            {"no_uq", c.ablation.no_uq},
            {"no_unet", c.ablation.no_unet},
            {"no_wgan_gp", c.ablation.no_wgan_gp}}},
          {"generator",
           {{"height", c.generator.height},
            {"width", c.generator.width},
            {"base_channels", c.generator.base_channels},
            {"max_channels", c.generator.max_channels},
            {"skip_connections", c.generator.skip_connections}}},
          {"critic",
           {{"height", c.critic.height},
            {"width", c.critic.width},
            {"base_channels", c.critic.base_channels},
            {"max_channels", c.critic.max_channels},
            {"embedding_dim", c.critic.embedding_dim},
            {"dropout", c.critic.dropout}}},
          {"transform",
           {{"kind", rot ? "rot90" : "salt"},
            {"salt_fraction", c.transform.salt_fraction},
            {"salt_value", c.transform.salt_value},
            {"rot_choices", c.transform.rot_choices}}}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  check_keys(j, {"epochs", "batch_size", "lr", "adam_beta1", "adam_beta2", "critic_steps_per_gen_step", "seed", "loss",
                 "ablation", "generator", "critic", "transform"},
             "");
  read(j, "epochs", c.epochs, "");
  read(j, "batch_size", c.batch_size, "");
  read(j, "lr", c.lr, "");
  read(j, "adam_beta1", c.adam_beta1, "");
  read(j, "adam_beta2", c.adam_beta2, "");
  read(j, "critic_steps_per_gen_step", c.critic_steps_per_gen_step, "");
  read(j, "seed", c.seed, "");
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    check_keys(l, {"lambda", "alpha", "tau", "alpha1", "alpha2", "alpha3", "beta"}, "loss");
    read(l, "lambda", c.loss.lambda, "loss");
    read(l, "alpha", c.loss.alpha, "loss");
    read(l, "tau", c.loss.tau, "loss");
    read(l, "alpha1", c.loss.alpha1, "loss");
    read(l, "alpha2", c.loss.alpha2, "loss");
    read(l, "alpha3", c.loss.alpha3, "loss");
    read(l, "beta", c.loss.beta, "loss");
  }
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    check_keys(a, {"no_cl", "no_uq", "no_unet", "no_wgan_gp"}, "ablation");
    read(a, "no_cl", c.ablation.no_cl, "ablation");
    read(a, "no_uq", c.ablation.no_uq, "ablation");
    read(a, "no_unet", c.ablation.no_unet, "ablation");
    read(a, "no_wgan_gp", c.ablation.no_wgan_gp, "ablation");
  }
  if (j.contains("generator")) {
    const auto& g = j["generator"];
    check_keys(g, {"height", "width", "base_channels", "max_channels", "skip_connections"}, "generator");
    read(g, "height", c.generator.height, "generator");
    read(g, "width", c.generator.width, "generator");
    read(g, "base_channels", c.generator.base_channels, "generator");
    read(g, "max_channels", c.generator.max_channels, "generator");
    read(g, "skip_connections", c.generator.skip_connections, "generator");
  }
  if (j.contains("critic")) {
    const auto& k = j["critic"];
    check_keys(k, {"height", "width", "base_channels", "max_channels", "embedding_dim", "dropout"}, "critic");
    read(k, "height", c.critic.height, "critic");
    read(k, "width", c.critic.width, "critic");
    read(k, "base_channels", c.critic.base_channels, "critic");
    read(k, "max_channels", c.critic.max_channels, "critic");
    read(k, "embedding_dim", c.critic.embedding_dim, "critic");
    read(k, "dropout", c.critic.dropout, "critic");
  }
  if (j.contains("transform")) {
    const auto& t = j["transform"];
    check_keys(t, {"kind", "salt_fraction", "salt_value", "rot_choices"}, "transform");
    std::string kind = c.transform.kind == transforms::NegativeTransformConfig::Kind::Rot90 ? "rot90" : "salt";
    read(t, "kind", kind, "transform");
    if (kind == "salt") c.transform.kind = transforms::NegativeTransformConfig::Kind::SaltNoise;
    else if (kind == "rot90") c.transform.kind = transforms::NegativeTransformConfig::Kind::Rot90;
    else raise(Errc::ConfigError, "transform.kind must be \"salt\" or \"rot90\", got \"" + kind + "\"");
    read(t, "salt_fraction", c.transform.salt_fraction, "transform");
    read(t, "salt_value", c.transform.salt_value, "transform");
    read(t, "rot_choices", c.transform.rot_choices, "transform");
  }
  return c;
}

// ---- checkpoint files ----

namespace {

json history_json(const std::vector<EpochLosses>& h) {
  json out = json::array();
  for (const auto& e : h)
    out.push_back({{"epoch", e.epoch}, {"steps", e.steps}, {"critic", e.critic}, {"wasserstein", e.wasserstein},
                   {"penalty", e.penalty}, {"supcon", e.supcon}, {"hil", e.hil}, {"generator", e.generator}});
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) raise(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
  nn::save_tensors(dir / "params.bin", ckpt.state);
  json m = {{"format", "caad-checkpoint/1"},
            {"id", ckpt.id},
            {"parent_id", ckpt.parent_id},
            {"epoch", ckpt.epoch},
            {"data_hash", ckpt.data_hash},
            {"feedback_count", ckpt.feedback_count},
            {"params", "params.bin"},
            {"param_tensors", ckpt.state.size()},
            {"config", to_json(ckpt.config)},
            {"history", history_json(ckpt.history)}};
  {
    std::ofstream f(dir / "manifest.json");
    if (!f) raise(Errc::IoError, "cannot write " + (dir / "manifest.json").string());
    f << m.dump(2) << '\n';
  }
  std::ofstream csv(dir / "losses.csv");
  if (!csv) raise(Errc::IoError, "cannot write " + (dir / "losses.csv").string());
  csv << "epoch,steps,critic,wasserstein,penalty,supcon,hil,generator\n";
  char line[256];
  for (const auto& e : ckpt.history) {
    std::snprintf(line, sizeof(line), "%d,%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.steps, e.critic, e.wasserstein,
                  e.penalty, e.supcon, e.hil, e.generator);
    csv << line;
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) raise(Errc::NotFound, "no checkpoint manifest in " + dir.string());
  json m;
  try {
    m = json::parse(f);
  } catch (const json::exception& e) {
    raise(Errc::CorruptInput, "checkpoint manifest: " + std::string(e.what()));
  }
  if (m.value("format", "") != "caad-checkpoint/1")
    raise(Errc::CorruptInput, "unsupported checkpoint format in " + dir.string());
  Checkpoint c;
  try {
    c.id = m.at("id").get<std::string>();
    c.parent_id = m.at("parent_id").get<std::string>();
    c.epoch = m.at("epoch").get<int>();
    c.data_hash = m.at("data_hash").get<std::string>();
    c.feedback_count = m.at("feedback_count").get<std::size_t>();
    c.config = train_config_from_json(m.at("config"));
    for (const auto& e : m.at("history"))
      c.history.push_back({e.at("epoch").get<int>(), e.at("steps").get<long>(), e.at("critic").get<double>(),
                           e.at("wasserstein").get<double>(), e.at("penalty").get<double>(), e.at("supcon").get<double>(),
                           e.at("hil").get<double>(), e.at("generator").get<double>()});
  } catch (const json::exception& e) {
    raise(Errc::CorruptInput, "checkpoint manifest: " + std::string(e.what()));
  }
  auto entries = nn::load_tensors(dir / m.value("params", "params.bin"));
  auto probe = load_model(Checkpoint{c.id, c.parent_id, c.config, StateDict(entries.begin(), entries.end()), c.epoch, {}, {}, 0});
  c.state = export_model(*probe);  // canonical order
  return c;
}

}  // namespace caad::trainer
