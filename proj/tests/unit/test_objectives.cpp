#include <doctest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "caad/errors.hpp"
#include "caad/nn/ops.hpp"
#include "caad/objectives.hpp"
#include "caad/rng.hpp"

using namespace caad;
using objectives::Embeddings;

namespace {

Embeddings unit_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
  Embeddings z(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) z(i, j) = standard_normal(rng);
    z.row(i).normalize();
  }
  return z;
}

std::vector<int> random_labels(Eigen::Index n, Rng& rng) {
  std::vector<int> y(static_cast<std::size_t>(n));
  for (auto& v : y) v = static_cast<int>(uniform_index(rng, 2));
  return y;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("supcon matches the double-sum definition on random batches") {
  Rng rng = derive_rng(11, 0);
  const double taus[] = {0.07, 0.5, 1.0};
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + uniform_index(rng, 15));
    const auto d = static_cast<Eigen::Index>(1 + uniform_index(rng, 8));
    const double tau = taus[trial % 3];
    const Embeddings z = unit_rows(n, d, rng);
    const auto y = random_labels(n, rng);
    CHECK(rel_err(objectives::supcon_loss(z, y, tau), oracle::supcon(z, y, tau)) < 1e-9);
    for (int c : {0, 1}) CHECK(rel_err(objectives::supclass_loss(z, y, c, tau), oracle::supcon(z, y, tau, c)) < 1e-9);
  }
}

TEST_CASE("supcon: anchors without positives contribute nothing") {
  Rng rng = derive_rng(12, 0);
  const Embeddings z = unit_rows(4, 3, rng);
  CHECK(objectives::supcon_loss(z, std::vector<int>{0, 1, 2, 3}, 0.5) == 0.0);
  CHECK(objectives::supcon_loss(z.topRows(1), std::vector<int>{0}, 0.5) == 0.0);
}

TEST_CASE("supcon rejects rows that are not unit norm") {
  Embeddings z = Embeddings::Ones(3, 2);
  CHECK_THROWS_AS(objectives::supcon_loss(z, std::vector<int>{0, 0, 1}, 0.1), Error);
}

TEST_CASE("supcon gradient agrees with central differences") {
  Rng rng = derive_rng(13, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const Embeddings z = unit_rows(7, 4, rng);
    const auto y = random_labels(7, rng);
    const std::optional<int> anchor = trial % 3 == 0 ? std::nullopt : std::optional<int>(trial % 2);
    const auto r = objectives::supcon_with_grad(z, y, anchor, 0.5);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < z.rows(); ++i)
      for (Eigen::Index j = 0; j < z.cols(); ++j) {
        Embeddings p = z, m = z;
        p(i, j) += h;
        m(i, j) -= h;
        const double fd = (oracle::supcon(p, y, 0.5, anchor.value_or(-1)) - oracle::supcon(m, y, 0.5, anchor.value_or(-1))) / (2 * h);
        CHECK(r.grad(i, j) == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
      }
  }
}

TEST_CASE("hil loss matches the composition of supclass oracles") {
  Rng rng = derive_rng(14, 0);
  const double taus[] = {0.07, 0.5, 1.0};
  for (int trial = 0; trial < 200; ++trial) {
    const double tau = taus[trial % 3];
    const auto d = static_cast<Eigen::Index>(1 + uniform_index(rng, 8));
    const Embeddings x = unit_rows(1 + uniform_index(rng, 5), d, rng);
    const Embeddings xa = unit_rows(1 + uniform_index(rng, 5), d, rng);
    const Embeddings ben = unit_rows(uniform_index(rng, 4), d, rng);
    const Embeddings anom = unit_rows(uniform_index(rng, 4), d, rng);
    objectives::LossConfig cfg;
    cfg.tau = tau;
    cfg.alpha1 = 0.5 + uniform01(rng);
    const auto parts = objectives::hil_loss(x, xa, ben, anom, cfg);
    CHECK(rel_err(parts.total, oracle::hil(x, xa, ben, anom, tau, cfg.alpha1)) < 1e-9);
  }
}

TEST_CASE("hil loss with no HIL anomalies keeps only the benign terms") {
  Rng rng = derive_rng(15, 0);
  const Embeddings x = unit_rows(4, 3, rng), xa = unit_rows(4, 3, rng), ben = unit_rows(2, 3, rng);
  const Embeddings none(0, 3);
  const auto parts = objectives::hil_loss(x, xa, ben, none, {});
  CHECK(parts.term1 == 0.0);
  CHECK(parts.term3 == 0.0);
  CHECK(parts.term2 > 0.0);
  CHECK(parts.grad_anom.rows() == 0);
  CHECK_THROWS_AS(objectives::hil_loss(none, none, none, none, {}), Error);
}

TEST_CASE("critic loss combinations") {
  objectives::LossConfig cfg;
  cfg.alpha = 0.5;
  const objectives::CriticLossParts p{2.0, 0.25, 4.0, 1.5};
  CHECK(objectives::caad_critic_loss(p, cfg) == doctest::Approx(-2.0 + 0.25 + 2.0));
  CHECK(objectives::retrain_loss(p, cfg) == doctest::Approx(-2.0 + 0.25 + 2.0 + 1.5));
  const double real[] = {1, 2, 3}, fake[] = {0, 1};
  CHECK(objectives::wasserstein_critic_objective(real, fake) == doctest::Approx(1.5));
  CHECK_THROWS_AS(objectives::wasserstein_critic_objective({}, fake), Error);
}

TEST_CASE("bce with logits matches the textbook form") {
  const std::vector<double> s{-3.0, -0.2, 0.0, 1.7, 40.0};
  std::vector<double> g;
  const double l1 = objectives::bce_with_logits(s, 1.0, &g);
  double want = 0;
  for (double v : s) want += -std::log(1 / (1 + std::exp(-v)));
  CHECK(l1 == doctest::Approx(want / 5));
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(g[i] == doctest::Approx((1 / (1 + std::exp(-s[i])) - 1) / 5));
  const double l0 = objectives::bce_with_logits(s, 0.0);
  want = 0;
  for (double v : s) want += v > 30 ? v : -std::log(1 - 1 / (1 + std::exp(-v)));
  CHECK(l0 == doctest::Approx(want / 5));
}

TEST_CASE("generator loss adds a scaled reconstruction error") {
  const double scores[] = {1.0, 3.0};
  const float x[] = {0, 1, 1, 0}, gx[] = {0, 0, 1, 1};
  CHECK(objectives::generator_loss(scores, x, gx, 0.0) == doctest::Approx(-2.0));
  CHECK(objectives::generator_loss(scores, x, gx, 2.0) == doctest::Approx(-2.0 + 2.0 * 0.5));
}

namespace {

// D(x) = <w, x> over flattened pixels: the input gradient is w everywhere.
objectives::ScoreFn<double> linear_critic(const nn::Var<double>& w) {
  return [w](const nn::Var<double>& x) {
    const nn::Index n = x.dim(0), p = x.value().size() / n;
    return nn::matmul(nn::reshape(x, {n, p}), w);
  };
}

nn::Tensor<double> direction(nn::Index p, double norm, std::uint64_t seed) {
  Rng rng = derive_rng(seed, 1);
  nn::Tensor<double> w(nn::Shape{p, 1});
  for (nn::Index i = 0; i < p; ++i) w[i] = standard_normal(rng);
  w.flat() *= norm / w.flat().matrix().norm();
  return w;
}

}  // namespace

TEST_CASE("gradient penalty of linear critics") {
  Rng rng = derive_rng(16, 0);
  nn::Tensor<double> real(nn::Shape{5, 1, 4, 4}), fake(nn::Shape{5, 1, 4, 4});
  for (nn::Index i = 0; i < real.size(); ++i) {
    real[i] = uniform01(rng);
    fake[i] = uniform01(rng);
  }
  SUBCASE("unit slope has no penalty") {
    nn::Var<double> w(direction(16, 1.0, 3), true);
    const auto pen = objectives::gradient_penalty<double>(linear_critic(w), real, fake, 10.0, rng);
    CHECK(pen.value()[0] < 1e-6);
  }
  SUBCASE("slope two costs lambda") {
    nn::Var<double> w(direction(16, 2.0, 4), true);
    const auto pen = objectives::gradient_penalty<double>(linear_critic(w), real, fake, 10.0, rng);
    CHECK(std::abs(pen.value()[0] - 10.0) < 1e-4);
    // d/dw lambda(|w|-1)^2 = 2 lambda (|w|-1) w/|w|
    nn::backward(pen);
    for (nn::Index i = 0; i < 16; ++i) CHECK(w.grad()[i] == doctest::Approx(2 * 10.0 * 1.0 * w.value()[i] / 2.0));
  }
}

TEST_CASE("interpolation stays on the segment") {
  Rng rng = derive_rng(17, 0);
  nn::Tensor<float> a(nn::Shape{3, 2}, 1.0f), b(nn::Shape{3, 2}, 3.0f);
  const auto mid = objectives::interpolate_samples(a, b, rng, 0.25);
  for (nn::Index i = 0; i < mid.size(); ++i) CHECK(mid[i] == doctest::Approx(0.25 * 1 + 0.75 * 3));
  const auto r = objectives::interpolate_samples(a, b, rng);
  for (nn::Index i = 0; i < 3; ++i) {
    CHECK(r[2 * i] == r[2 * i + 1]);  // one epsilon per sample
    CHECK(r[2 * i] >= 1.0f);
    CHECK(r[2 * i] <= 3.0f);
  }
  CHECK_THROWS_AS(objectives::interpolate_samples(a, nn::Tensor<float>(nn::Shape{2, 2}), rng), Error);
}
