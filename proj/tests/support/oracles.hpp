#pragma once

// Direct-from-definition reference implementations. Deliberately naive: no
// log-sum-exp, no sorting tricks, no shared code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline double dot(const Eigen::MatrixXd& z, Eigen::Index i, Eigen::Index j) {
  double s = 0;
  for (Eigen::Index d = 0; d < z.cols(); ++d) s += z(i, d) * z(j, d);
  return s;
}

/// sum_i -1/|P(i)| sum_p log( exp(z_i.z_p/tau) / sum_{a != i} exp(z_i.z_a/tau) ), anchors with label c (or all).
inline double supcon(const Eigen::MatrixXd& z, const std::vector<int>& y, double tau, int only_class = -1) {
  double total = 0;
  const auto n = z.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (only_class >= 0 && y[i] != only_class) continue;
    double denom = 0;
    for (Eigen::Index a = 0; a < n; ++a)
      if (a != i) denom += std::exp(dot(z, i, a) / tau);
    double inner = 0;
    int positives = 0;
    for (Eigen::Index p = 0; p < n; ++p) {
      if (p == i || y[p] != y[i]) continue;
      inner += std::log(std::exp(dot(z, i, p) / tau) / denom);
      ++positives;
    }
    if (positives > 0) total += -inner / positives;
  }
  return total;
}

inline Eigen::MatrixXd vstack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() + b.rows(), std::max(a.cols(), b.cols()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) out.row(i) = a.row(i);
  for (Eigen::Index i = 0; i < b.rows(); ++i) out.row(a.rows() + i) = b.row(i);
  return out;
}

inline double hil(const Eigen::MatrixXd& x, const Eigen::MatrixXd& xaug, const Eigen::MatrixXd& ben,
                  const Eigen::MatrixXd& anom, double tau, double a1 = 1, double a2 = 1, double a3 = 1) {
  auto term = [&](const Eigen::MatrixXd& p, int lp, const Eigen::MatrixXd& q, int lq, int c) {
    std::vector<int> y(p.rows(), lp);
    y.insert(y.end(), q.rows(), lq);
    return supcon(vstack(p, q), y, tau, c);
  };
  return a1 * term(anom, 1, x, 0, 1) + a2 * term(ben, 0, xaug, 1, 0) + a3 * term(ben, 0, anom, 1, 0);
}

/// P(score_pos > score_neg) + 0.5 P(tie) over every pair.
inline double auroc_pairwise(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1;
      if (s[i] > s[j]) wins += 1;
      else if (s[i] == s[j]) wins += 0.5;
    }
  return wins / pairs;
}

/// Enumerates every distinct score as a threshold (predict 1 iff s >= t), top down.
inline double auprc_enumerate(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> thresholds = s;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double positives = 0;
  for (int v : y) positives += v;
  double ap = 0, prev_recall = 0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) (y[i] ? tp : fp) += 1;
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return ap;
}

/// Smallest sample value v such that at least ceil(phi*n) samples are <= v.
inline double nearest_rank(const std::vector<double>& v, double phi) {
  const double need = std::ceil(phi * static_cast<double>(v.size()) - 1e-9);
  double best = INFINITY;
  for (double c : v) {
    double below = 0;
    for (double u : v) below += u <= c;
    if (below >= need) best = std::min(best, c);
  }
  return best;
}

inline double f1(double tp, double fp, double fn) {
  const double p = tp / (tp + fp), r = tp / (tp + fn);
  return 2 * p * r / (p + r);
}

}  // namespace oracle
