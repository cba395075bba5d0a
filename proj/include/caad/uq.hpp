#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace caad::uq {

struct UncertaintyRecord {
  std::string instance_id;
  int u0 = 0;  // benign votes
  int u1 = 0;  // anomaly votes
  double mu = 0;
  double certainty = 1;
  int prediction = 0;
  double score = 0;  // score of the renormalized mean embedding
};

/// Exact vote arithmetic: mu = 1 - max(u0,u1)/k; ties predict anomaly.
double uncertainty(int u0, int u1);
int majority(int u0, int u1);

/// One vote per per-sample score: anomaly iff score > theta.
UncertaintyRecord vote_and_score(std::string id, std::span<const double> sample_scores, double theta,
                                 double mean_score);

/// ceil(h%·N) ids with the largest mu, ties by id ascending, mu-descending order.
std::vector<std::string> select_hil(std::span<const UncertaintyRecord> records, double h_percent);

struct MCEmbeddingSet {
  std::vector<Eigen::MatrixXd> samples;  // k matrices of [N, D]
  Eigen::MatrixXd mean;                  // renormalized arithmetic mean
  int k() const noexcept { return static_cast<int>(samples.size()); }
};

/// Mean of the samples with every row scaled back to unit norm.
Eigen::MatrixXd renormalized_mean(std::span<const Eigen::MatrixXd> samples);

}  // namespace caad::uq
