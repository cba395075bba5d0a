#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "caad/uq.hpp"

namespace caad::evalkit {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;  // anomaly is the positive class
};

struct F1Report {
  double benign_f1 = 0;
  double anomaly_f1 = 0;
  double weighted_f1 = 0;
  std::size_t n_benign = 0;
  std::size_t n_anomaly = 0;
  Confusion confusion;
};

/// Per-class F1 with zero-support classes at 0 (and a warning), support-weighted average.
F1Report f1_scores(std::span<const int> predictions, std::span<const int> labels);
double weighted_f1(double benign_f1, double anomaly_f1, std::size_t n_benign, std::size_t n_anomaly);

/// Mann-Whitney statistic with average ranks for ties.
double auroc(std::span<const double> scores, std::span<const int> labels);
/// Step-wise sum over distinct thresholds of (recall gain) x precision.
double auprc(std::span<const double> scores, std::span<const int> labels);

struct MetricsReport {
  F1Report f1;
  double auroc = 0;
  double auprc = 0;
};

MetricsReport evaluate(std::span<const double> scores, std::span<const int> predictions, std::span<const int> labels);
nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const nlohmann::json& j);

struct FiveNumber {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  std::size_t n = 0;
};

/// Quartiles by linear interpolation between order statistics.
FiveNumber five_number_summary(std::vector<double> values);

struct BoxGroup {
  FiveNumber before;
  FiveNumber after;
};

/// Certainty summaries for HIL-benign and HIL-anomaly instances; empty groups are absent.
std::map<std::string, BoxGroup> uncertainty_boxplot_data(std::span<const uq::UncertaintyRecord> before,
                                                         std::span<const uq::UncertaintyRecord> after,
                                                         std::span<const std::string> hil_ids,
                                                         const std::map<std::string, int>& labels);
nlohmann::json to_json(const std::map<std::string, BoxGroup>& groups);

/// Fixed-width table in the style of the paper's result tables.
std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);
std::string fixed(double v, int digits = 2);

}  // namespace caad::evalkit
