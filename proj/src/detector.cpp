#include "caad/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "caad/errors.hpp"
#include "caad/rng.hpp"

namespace caad::detector {

std::vector<Grid> kmeans(std::span<const Grid> grids, std::size_t m, std::uint64_t seed, int max_iters) {
  require(m >= 1, Errc::ConfigError, "cluster count m must be >= 1");
  require(m <= grids.size(), Errc::ConfigError,
          "cluster count m=" + std::to_string(m) + " exceeds " + std::to_string(grids.size()) + " training grids");
  const Eigen::Index d = grids.front().size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(grids.size()), d);
  for (std::size_t i = 0; i < grids.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXf>(grids[i].data(), d).cast<double>();
  Eigen::MatrixXd c(static_cast<Eigen::Index>(m), d);
  if (m == 1) {
    c.row(0) = x.colwise().mean();
  } else {
    Rng rng = derive_rng(seed, 0x6B3A);
    c.row(0) = x.row(static_cast<Eigen::Index>(uniform_index(rng, grids.size())));
    Eigen::VectorXd best = (x.rowwise() - c.row(0)).rowwise().squaredNorm();
    for (std::size_t k = 1; k < m; ++k) {
      const double total = best.sum();
      Eigen::Index pick = 0;
      if (total > 0) {
        double r = uniform01(rng) * total;
        for (pick = 0; pick < x.rows() - 1 && r >= best(pick); ++pick) r -= best(pick);
      } else {
        pick = static_cast<Eigen::Index>(uniform_index(rng, grids.size()));
      }
      c.row(static_cast<Eigen::Index>(k)) = x.row(pick);
      best = best.cwiseMin((x.rowwise() - c.row(static_cast<Eigen::Index>(k))).rowwise().squaredNorm());
    }
    std::vector<Eigen::Index> assign(static_cast<std::size_t>(x.rows()), -1);
    for (int it = 0; it < max_iters; ++it) {
      bool changed = false;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::Index arg;
        (c.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&arg);
        if (assign[static_cast<std::size_t>(i)] != arg) {
          assign[static_cast<std::size_t>(i)] = arg;
          changed = true;
        }
      }
      if (!changed) break;
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(c.rows(), d);
      Eigen::VectorXd count = Eigen::VectorXd::Zero(c.rows());
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        sum.row(assign[static_cast<std::size_t>(i)]) += x.row(i);
        count(assign[static_cast<std::size_t>(i)]) += 1;
      }
      for (Eigen::Index k = 0; k < c.rows(); ++k)
        if (count(k) > 0) c.row(k) = sum.row(k) / count(k);
    }
  }
  std::vector<Grid> out;
  const Eigen::Index rows = grids.front().rows(), cols = grids.front().cols();
  for (Eigen::Index k = 0; k < c.rows(); ++k) {
    Grid g(rows, cols);
    Eigen::Map<Eigen::RowVectorXf>(g.data(), d) = c.row(k).cast<float>();
    out.push_back(std::move(g));
  }
  return out;
}

CentroidBank fit_centroids(std::span<const Grid> train, std::size_t m, std::uint64_t seed, const EmbedFn& embed,
                           CentroidAgg agg) {
  require(!train.empty(), Errc::EmptyInput, "centroids need training grids");
  CentroidBank bank;
  bank.centroids = kmeans(train, m, seed);
  bank.centroid_embeddings = embed(bank.centroids);
  bank.agg = agg;
  return bank;
}

double anomaly_score(const Eigen::Ref<const Eigen::VectorXd>& embedding, const CentroidBank& bank) {
  require(bank.centroid_embeddings.rows() > 0, Errc::ConfigError, "centroid bank is empty");
  const double n = embedding.norm();
  if (!(std::abs(n - 1.0) <= 1e-4)) raise(Errc::NormError, "embedding norm " + std::to_string(n) + " is not 1");
  const Eigen::VectorXd d = 1.0 - (bank.centroid_embeddings * embedding).array();
  return bank.agg == CentroidAgg::Max ? d.maxCoeff() : d.minCoeff();
}

std::vector<double> anomaly_scores(const Eigen::Ref<const Eigen::MatrixXd>& embeddings, const CentroidBank& bank) {
  std::vector<double> out(static_cast<std::size_t>(embeddings.rows()));
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) out[static_cast<std::size_t>(i)] = anomaly_score(embeddings.row(i).transpose(), bank);
  return out;
}

Histogram histogram(std::span<const double> values, std::size_t bins) {
  Histogram h;
  h.counts.assign(bins, 0);
  if (values.empty() || bins == 0) return h;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  h.lo = *lo;
  h.hi = *hi;
  const double width = (h.hi - h.lo) / static_cast<double>(bins);
  for (double v : values) {
    auto b = width > 0 ? static_cast<std::size_t>((v - h.lo) / width) : 0;
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

double nearest_rank_quantile(std::vector<double> values, double phi) {
  require(!values.empty(), Errc::EmptyInput, "quantile of an empty set");
  require(phi > 0 && phi <= 1, Errc::ConfigError, "phi must be in (0,1]");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  // The tolerance keeps phi·n that is an integer in exact arithmetic from rounding up.
  auto rank = static_cast<std::size_t>(std::ceil(phi * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

ThresholdCalibration calibrate_threshold(std::span<const double> val_scores, double phi) {
  if (val_scores.empty()) raise(Errc::EmptyInput, "threshold calibration needs validation scores");
  ThresholdCalibration cal;
  cal.phi = phi;
  cal.n = val_scores.size();
  cal.theta = nearest_rank_quantile({val_scores.begin(), val_scores.end()}, phi);
  const auto below = std::count_if(val_scores.begin(), val_scores.end(), [&](double s) { return s < cal.theta; });
  cal.fraction_below = static_cast<double>(below) / static_cast<double>(cal.n);
  cal.hist = histogram(val_scores, 20);
  return cal;
}

}  // namespace caad::detector
