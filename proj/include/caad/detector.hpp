#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "caad/spectral.hpp"

namespace caad::detector {

using spectral::Grid;

enum class CentroidAgg { Max, Min };

/// Maps a set of grids to unit embedding rows (the frozen critic's eval pass).
using EmbedFn = std::function<Eigen::MatrixXd(std::span<const Grid>)>;

struct CentroidBank {
  std::vector<Grid> centroids;
  Eigen::MatrixXd centroid_embeddings;  // one unit row per centroid
  CentroidAgg agg = CentroidAgg::Max;
  std::size_t m() const noexcept { return centroids.size(); }
};

/// Lloyd iterations from a seeded k-means++ start on flattened grids; m=1 is the mean grid.
std::vector<Grid> kmeans(std::span<const Grid> grids, std::size_t m, std::uint64_t seed, int max_iters = 100);

CentroidBank fit_centroids(std::span<const Grid> train, std::size_t m, std::uint64_t seed, const EmbedFn& embed,
                           CentroidAgg agg = CentroidAgg::Max);

/// Aggregate over centroids of the cosine distance 1 - <e, c_m>, in [0,2].
double anomaly_score(const Eigen::Ref<const Eigen::VectorXd>& embedding, const CentroidBank& bank);
/// Scores every row.
std::vector<double> anomaly_scores(const Eigen::Ref<const Eigen::MatrixXd>& embeddings, const CentroidBank& bank);

struct Histogram {
  double lo = 0, hi = 0;
  std::vector<std::size_t> counts;
};

Histogram histogram(std::span<const double> values, std::size_t bins);

struct ThresholdCalibration {
  double theta = 0;
  double phi = 0.99;
  std::size_t n = 0;
  double fraction_below = 0;  // empirical P(s < theta) on the calibration scores
  Histogram hist;
};

/// Smallest value v with at least ceil(phi·n) of the sorted values <= v.
double nearest_rank_quantile(std::vector<double> values, double phi);

ThresholdCalibration calibrate_threshold(std::span<const double> val_scores, double phi);

/// 1 iff score > theta.
inline int classify(double score, double theta) { return score > theta ? 1 : 0; }

}  // namespace caad::detector
