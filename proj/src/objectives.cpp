#include "caad/objectives.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "caad/errors.hpp"
#include "caad/nn/ops.hpp"

namespace caad::objectives {

void LossConfig::validate() const {
  require(lambda >= 0, Errc::ConfigError, "loss.lambda must be >= 0");
  require(tau > 0, Errc::ConfigError, "loss.tau must be > 0");
  require(alpha >= 0 && alpha1 >= 0 && alpha2 >= 0 && alpha3 >= 0, Errc::ConfigError, "loss alphas must be >= 0");
  require(beta >= 0, Errc::ConfigError, "loss.beta must be >= 0");
}

namespace {

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

double wasserstein_critic_objective(std::span<const double> real_scores, std::span<const double> fake_scores) {
  if (real_scores.empty() || fake_scores.empty()) raise(Errc::EmptyBatch, "wasserstein objective needs scores");
  return mean(real_scores) - mean(fake_scores);
}

void check_unit_rows(const EmbeddingsRef& z, double tol) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double n = z.row(i).norm();
    if (!(std::abs(n - 1.0) <= tol))
      raise(Errc::NormError, "embedding row " + std::to_string(i) + " has norm " + std::to_string(n));
  }
}

LossGrad supcon_with_grad(const EmbeddingsRef& z, std::span<const int> labels, std::optional<int> anchor_class,
                          double tau) {
  require(static_cast<Eigen::Index>(labels.size()) == z.rows(), Errc::ShapeError, "one label per embedding row");
  check_unit_rows(z);
  const Eigen::Index n = z.rows();
  LossGrad out;
  out.grad = Embeddings::Zero(n, z.cols());
  if (n < 2) return out;
  const Eigen::MatrixXd s = (z * z.transpose()) / tau;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (anchor_class && labels[i] != *anchor_class) continue;
    Eigen::Index positives = 0;
    for (Eigen::Index j = 0; j < n; ++j) positives += j != i && labels[j] == labels[i];
    if (positives == 0) continue;
    double mx = -INFINITY;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) mx = std::max(mx, s(i, j));
    double denom = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) denom += std::exp(s(i, j) - mx);
    const double lse = mx + std::log(denom);
    double pos_sum = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const bool pos = labels[j] == labels[i];
      if (pos) pos_sum += s(i, j);
      w(i, j) = std::exp(s(i, j) - lse) - (pos ? 1.0 / static_cast<double>(positives) : 0.0);
    }
    out.loss += lse - pos_sum / static_cast<double>(positives);
  }
  out.grad = ((w + w.transpose()) * z) / tau;
  return out;
}

double supcon_loss(const EmbeddingsRef& z, std::span<const int> labels, double tau) {
  return supcon_with_grad(z, labels, std::nullopt, tau).loss;
}

double supclass_loss(const EmbeddingsRef& z, std::span<const int> labels, int c, double tau) {
  return supcon_with_grad(z, labels, c, tau).loss;
}

HilParts hil_loss(const EmbeddingsRef& x, const EmbeddingsRef& xaug, const EmbeddingsRef& hil_ben,
                  const EmbeddingsRef& hil_anom, const LossConfig& cfg) {
  if (x.rows() + xaug.rows() + hil_ben.rows() + hil_anom.rows() == 0)
    raise(Errc::EmptyBatch, "HIL loss with every set empty");
  const Eigen::Index dim = std::max({x.cols(), xaug.cols(), hil_ben.cols(), hil_anom.cols()});
  HilParts out;
  out.grad_x = Embeddings::Zero(x.rows(), dim);
  out.grad_xaug = Embeddings::Zero(xaug.rows(), dim);
  out.grad_ben = Embeddings::Zero(hil_ben.rows(), dim);
  out.grad_anom = Embeddings::Zero(hil_anom.rows(), dim);

  // Stacks (a with label la) over (b with label lb), evaluates supclass(c), scatters the gradient back.
  auto term = [&](const EmbeddingsRef& a, int la, const EmbeddingsRef& b, int lb, int c, double weight,
                  Embeddings& ga, Embeddings& gb) {
    if (weight == 0 || a.rows() + b.rows() < 2) return 0.0;
    Embeddings d(a.rows() + b.rows(), dim);
    if (a.rows()) d.topRows(a.rows()) = a;
    if (b.rows()) d.bottomRows(b.rows()) = b;
    std::vector<int> labels(static_cast<std::size_t>(d.rows()), lb);
    std::fill_n(labels.begin(), a.rows(), la);
    LossGrad r = supcon_with_grad(d, labels, c, cfg.tau);
    ga += weight * r.grad.topRows(a.rows());
    gb += weight * r.grad.bottomRows(b.rows());
    return r.loss;
  };
  out.term1 = term(hil_anom, 1, x, 0, 1, cfg.alpha1, out.grad_anom, out.grad_x);
  out.term2 = term(hil_ben, 0, xaug, 1, 0, cfg.alpha2, out.grad_ben, out.grad_xaug);
  out.term3 = term(hil_ben, 0, hil_anom, 1, 0, cfg.alpha3, out.grad_ben, out.grad_anom);
  out.total = cfg.alpha1 * out.term1 + cfg.alpha2 * out.term2 + cfg.alpha3 * out.term3;
  return out;
}

double caad_critic_loss(const CriticLossParts& parts, const LossConfig& cfg) {
  return -parts.wasserstein + parts.penalty + cfg.alpha * parts.supcon;
}

double retrain_loss(const CriticLossParts& parts, const LossConfig& cfg) {
  return caad_critic_loss(parts, cfg) + parts.hil;
}

double generator_loss(std::span<const double> fake_scores, std::span<const float> x, std::span<const float> gx,
                      double beta) {
  if (fake_scores.empty()) raise(Errc::EmptyBatch, "generator loss needs scores");
  double loss = -mean(fake_scores);
  if (beta != 0) {
    require(x.size() == gx.size() && !x.empty(), Errc::ShapeError, "reconstruction pair differs in size");
    double se = 0;
    for (std::size_t i = 0; i < x.size(); ++i) se += (static_cast<double>(x[i]) - gx[i]) * (static_cast<double>(x[i]) - gx[i]);
    loss += beta * se / static_cast<double>(x.size());
  }
  return loss;
}

double bce_with_logits(std::span<const double> scores, double target, std::vector<double>* grad) {
  if (scores.empty()) raise(Errc::EmptyBatch, "cross-entropy needs scores");
  const double n = static_cast<double>(scores.size());
  double loss = 0;
  if (grad) grad->resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    // log(1 + e^-|s|) + max(s, 0) - s·t
    loss += std::log1p(std::exp(-std::abs(s))) + std::max(s, 0.0) - s * target;
    if (grad) (*grad)[i] = (1.0 / (1.0 + std::exp(-s)) - target) / n;
  }
  return loss / n;
}

template <typename T>
nn::Tensor<T> interpolate_samples(const nn::Tensor<T>& real, const nn::Tensor<T>& fake, Rng& rng,
                                  std::optional<double> eps) {
  require(real.shape() == fake.shape() && real.rank() >= 1, Errc::ShapeError,
          "interpolation needs equal shapes, got " + nn::to_string(real.shape()) + " and " + nn::to_string(fake.shape()));
  const nn::Index n = real.dim(0), per = real.size() / std::max<nn::Index>(n, 1);
  nn::Tensor<T> out(real.shape());
  for (nn::Index i = 0; i < n; ++i) {
    const T e = static_cast<T>(eps ? *eps : uniform01(rng));
    for (nn::Index k = i * per; k < (i + 1) * per; ++k) out[k] = e * real[k] + (T(1) - e) * fake[k];
  }
  return out;
}

template <typename T>
nn::Var<T> gradient_penalty(const ScoreFn<T>& critic, const nn::Tensor<T>& points, double lambda) {
  nn::Var<T> x(points, true);
  nn::Var<T> scores = critic(x);
  const nn::Var<T> outs[] = {scores};
  const nn::Tensor<T> seeds[] = {nn::Tensor<T>(scores.shape(), T(1))};
  const nn::Var<T> ins[] = {x};
  nn::Var<T> g = nn::grad<T>(outs, seeds, ins, true)[0];
  if (!g.value().flat().allFinite()) raise(Errc::NumericalError, "critic input gradient is not finite");
  nn::Var<T> dev = nn::add_scalar(nn::row_norms(g), T(-1));
  return nn::scale(nn::mean_all(nn::mul(dev, dev)), static_cast<T>(lambda));
}

template <typename T>
nn::Var<T> gradient_penalty(const ScoreFn<T>& critic, const nn::Tensor<T>& real, const nn::Tensor<T>& fake,
                            double lambda, Rng& rng) {
  return gradient_penalty(critic, interpolate_samples(real, fake, rng), lambda);
}

template nn::Tensor<float> interpolate_samples(const nn::Tensor<float>&, const nn::Tensor<float>&, Rng&, std::optional<double>);
template nn::Tensor<double> interpolate_samples(const nn::Tensor<double>&, const nn::Tensor<double>&, Rng&, std::optional<double>);
template nn::Var<float> gradient_penalty(const ScoreFn<float>&, const nn::Tensor<float>&, double);
template nn::Var<double> gradient_penalty(const ScoreFn<double>&, const nn::Tensor<double>&, double);
template nn::Var<float> gradient_penalty(const ScoreFn<float>&, const nn::Tensor<float>&, const nn::Tensor<float>&, double, Rng&);
template nn::Var<double> gradient_penalty(const ScoreFn<double>&, const nn::Tensor<double>&, const nn::Tensor<double>&, double, Rng&);

}  // namespace caad::objectives
