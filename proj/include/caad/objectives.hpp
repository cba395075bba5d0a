#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "caad/nn/autograd.hpp"
#include "caad/rng.hpp"

namespace caad::objectives {

using Embeddings = Eigen::MatrixXd;  // one row per instance
using EmbeddingsRef = Eigen::Ref<const Eigen::MatrixXd>;

struct LossConfig {
  double lambda = 10;  // gradient-penalty weight
  double alpha = 1;    // contrastive weight
  double tau = 0.07;
  double alpha1 = 1;
  double alpha2 = 1;
  double alpha3 = 1;
  double beta = 0;  // generator reconstruction weight

  void validate() const;
};

/// E[D(x)] - E[D(x~)]; the critic maximizes it.
double wasserstein_critic_objective(std::span<const double> real_scores, std::span<const double> fake_scores);

/// Loss value and its gradient with respect to every embedding row.
struct LossGrad {
  double loss = 0;
  Embeddings grad;
};

/// Rows must be unit-norm (NormError otherwise).
void check_unit_rows(const EmbeddingsRef& z, double tol = 1e-4);

/// Supervised contrastive loss summed over anchors; anchors without positives add 0.
double supcon_loss(const EmbeddingsRef& z, std::span<const int> labels, double tau);
/// Anchors restricted to label c; denominators still range over every other row.
double supclass_loss(const EmbeddingsRef& z, std::span<const int> labels, int c, double tau);
/// Value and gradient; anchor_class = nullopt means every row is an anchor.
LossGrad supcon_with_grad(const EmbeddingsRef& z, std::span<const int> labels, std::optional<int> anchor_class,
                          double tau);

struct HilParts {
  double term1 = 0, term2 = 0, term3 = 0;
  double total = 0;
  Embeddings grad_x, grad_xaug, grad_ben, grad_anom;
};

/// a1·supclass({anom:1, X:0}, c=1) + a2·supclass({ben:0, Xaug:1}, c=0) + a3·supclass({ben:0, anom:1}, c=0).
HilParts hil_loss(const EmbeddingsRef& x, const EmbeddingsRef& xaug, const EmbeddingsRef& hil_ben,
                  const EmbeddingsRef& hil_anom, const LossConfig& cfg);

struct CriticLossParts {
  double wasserstein = 0;  // E[D(x)] - E[D(x~)]
  double penalty = 0;      // already scaled by lambda
  double supcon = 0;       // unscaled
  double hil = 0;          // already weighted
};

/// -wasserstein + penalty + alpha·supcon.
double caad_critic_loss(const CriticLossParts& parts, const LossConfig& cfg);
/// caad_critic_loss + hil.
double retrain_loss(const CriticLossParts& parts, const LossConfig& cfg);

/// -mean(fake_scores) + beta·MSE(x, G(x)).
double generator_loss(std::span<const double> fake_scores, std::span<const float> x, std::span<const float> gx,
                      double beta);

/// Mean binary cross-entropy with logits against a constant target, and d/dscore.
double bce_with_logits(std::span<const double> scores, double target, std::vector<double>* grad = nullptr);

/// x̌ = ε·real + (1-ε)·fake with ε ~ U(0,1) per sample; `eps` overrides the draw.
template <typename T>
nn::Tensor<T> interpolate_samples(const nn::Tensor<T>& real, const nn::Tensor<T>& fake, Rng& rng,
                                  std::optional<double> eps = std::nullopt);

template <typename T>
using ScoreFn = std::function<nn::Var<T>(const nn::Var<T>&)>;

/// λ·mean((‖∇D(x̌)‖₂ − 1)²) at the given points, differentiable in the critic's parameters.
template <typename T>
nn::Var<T> gradient_penalty(const ScoreFn<T>& critic, const nn::Tensor<T>& points, double lambda);

/// Convenience: interpolates then penalizes.
template <typename T>
nn::Var<T> gradient_penalty(const ScoreFn<T>& critic, const nn::Tensor<T>& real, const nn::Tensor<T>& fake,
                            double lambda, Rng& rng);

}  // namespace caad::objectives
