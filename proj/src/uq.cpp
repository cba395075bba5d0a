#include "caad/uq.hpp"

#include <algorithm>
#include <cmath>

#include "caad/errors.hpp"

namespace caad::uq {

double uncertainty(int u0, int u1) {
  const int k = u0 + u1;
  require(k > 0 && u0 >= 0 && u1 >= 0, Errc::ConfigError, "vote counts must be non-negative with k > 0");
  return 1.0 - static_cast<double>(std::max(u0, u1)) / static_cast<double>(k);
}

int majority(int u0, int u1) { return u1 >= u0 ? 1 : 0; }

UncertaintyRecord vote_and_score(std::string id, std::span<const double> sample_scores, double theta,
                                 double mean_score) {
  UncertaintyRecord r;
  r.instance_id = std::move(id);
  for (double s : sample_scores) (s > theta ? r.u1 : r.u0)++;
  r.mu = uncertainty(r.u0, r.u1);
  r.certainty = 1.0 - r.mu;
  r.prediction = majority(r.u0, r.u1);
  r.score = mean_score;
  return r;
}

std::vector<std::string> select_hil(std::span<const UncertaintyRecord> records, double h_percent) {
  require(!records.empty(), Errc::EmptyInput, "no scored records to select from");
  require(h_percent >= 0 && h_percent <= 100, Errc::ConfigError, "h must be in [0,100]");
  std::vector<const UncertaintyRecord*> order;
  for (const auto& r : records) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](const UncertaintyRecord* a, const UncertaintyRecord* b) {
    if (a->mu != b->mu) return a->mu > b->mu;
    return a->instance_id < b->instance_id;
  });
  // The tolerance keeps exact products such as 5% of 1000 from rounding up.
  const double exact = h_percent * static_cast<double>(records.size()) / 100.0;
  auto count = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  count = std::min(count, records.size());
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < count; ++i) ids.push_back(order[i]->instance_id);
  return ids;
}

Eigen::MatrixXd renormalized_mean(std::span<const Eigen::MatrixXd> samples) {
  require(!samples.empty(), Errc::ConfigError, "no MC samples");
  Eigen::MatrixXd mean = samples.front();
  for (std::size_t j = 1; j < samples.size(); ++j) mean += samples[j];
  mean /= static_cast<double>(samples.size());
  mean.rowwise().normalize();
  return mean;
}

}  // namespace caad::uq
