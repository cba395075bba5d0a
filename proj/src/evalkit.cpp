#include "caad/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "caad/errors.hpp"

namespace caad::evalkit {

using nlohmann::json;

namespace {

double f1(std::size_t tp, std::size_t fp, std::size_t fn, const char* cls) {
  if (tp + fp == 0 || tp + fn == 0) {
    warn(std::string("F1 for class ") + cls + " has zero predicted or actual support; reported as 0");
    return 0.0;
  }
  if (tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2 * p * r / (p + r);
}

void check_binary(std::span<const int> labels, std::size_t n, const char* what) {
  require(labels.size() == n, Errc::ShapeError, std::string(what) + ": scores and labels differ in length");
  for (int l : labels) require(l == 0 || l == 1, Errc::ConfigError, std::string(what) + ": labels must be 0 or 1");
}

}  // namespace

double weighted_f1(double benign_f1, double anomaly_f1, std::size_t n_benign, std::size_t n_anomaly) {
  const double n = static_cast<double>(n_benign + n_anomaly);
  return (static_cast<double>(n_benign) * benign_f1 + static_cast<double>(n_anomaly) * anomaly_f1) / n;
}

F1Report f1_scores(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) raise(Errc::EmptyInput, "F1 of an empty set");
  check_binary(labels, predictions.size(), "f1_scores");
  F1Report r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] == 1, a = labels[i] == 1;
    if (p && a) ++r.confusion.tp;
    else if (p && !a) ++r.confusion.fp;
    else if (!p && a) ++r.confusion.fn;
    else ++r.confusion.tn;
  }
  const auto& c = r.confusion;
  r.n_anomaly = c.tp + c.fn;
  r.n_benign = c.tn + c.fp;
  r.anomaly_f1 = f1(c.tp, c.fp, c.fn, "anomaly");
  r.benign_f1 = f1(c.tn, c.fn, c.fp, "benign");
  r.weighted_f1 = weighted_f1(r.benign_f1, r.anomaly_f1, r.n_benign, r.n_anomaly);
  return r;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_binary(labels, scores.size(), "auroc");
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) raise(Errc::UndefinedMetric, "AUROC needs both classes");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum keeps average ranks of tied groups integral.
  double twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double twice_avg_rank = static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) twice_rank_sum += twice_avg_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  const double u = twice_rank_sum / 2.0 - np * (np + 1) / 2.0;
  return u / (np * nn);
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_binary(labels, scores.size(), "auprc");
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0) raise(Errc::UndefinedMetric, "AUPRC needs at least one positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double area = 0, prev_recall = 0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp)++;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

MetricsReport evaluate(std::span<const double> scores, std::span<const int> predictions, std::span<const int> labels) {
  MetricsReport r;
  r.f1 = f1_scores(predictions, labels);
  r.auroc = auroc(scores, labels);
  r.auprc = auprc(scores, labels);
  return r;
}

json to_json(const MetricsReport& r) {
  const auto& c = r.f1.confusion;
  return {{"benign_f1", r.f1.benign_f1},
          {"anomaly_f1", r.f1.anomaly_f1},
          {"weighted_f1", r.f1.weighted_f1},
          {"auroc", r.auroc},
          {"auprc", r.auprc},
          {"support", {{"benign", r.f1.n_benign}, {"anomaly", r.f1.n_anomaly}}},
          {"confusion", {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}}};
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport r;
  r.f1.benign_f1 = j.at("benign_f1").get<double>();
  r.f1.anomaly_f1 = j.at("anomaly_f1").get<double>();
  r.f1.weighted_f1 = j.at("weighted_f1").get<double>();
  r.auroc = j.at("auroc").get<double>();
  r.auprc = j.at("auprc").get<double>();
  r.f1.n_benign = j.at("support").at("benign").get<std::size_t>();
  r.f1.n_anomaly = j.at("support").at("anomaly").get<std::size_t>();
  const auto& c = j.at("confusion");
  r.f1.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                    c.at("fn").get<std::size_t>()};
  return r;
}

FiveNumber five_number_summary(std::vector<double> v) {
  FiveNumber f;
  f.n = v.size();
  if (v.empty()) return f;
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  f.min = v.front();
  f.q1 = q(0.25);
  f.median = q(0.5);
  f.q3 = q(0.75);
  f.max = v.back();
  return f;
}

std::map<std::string, BoxGroup> uncertainty_boxplot_data(std::span<const uq::UncertaintyRecord> before,
                                                         std::span<const uq::UncertaintyRecord> after,
                                                         std::span<const std::string> hil_ids,
                                                         const std::map<std::string, int>& labels) {
  std::map<std::string, double> cb, ca;
  for (const auto& r : before) cb[r.instance_id] = r.certainty;
  for (const auto& r : after) ca[r.instance_id] = r.certainty;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& id : hil_ids) {
    auto l = labels.find(id);
    auto b = cb.find(id);
    auto a = ca.find(id);
    if (l == labels.end() || b == cb.end() || a == ca.end())
      raise(Errc::NotFound, "instance " + id + " lacks a label or a before/after record");
    auto& g = groups[l->second == 1 ? "hil_anomaly" : "hil_benign"];
    g.first.push_back(b->second);
    g.second.push_back(a->second);
  }
  std::map<std::string, BoxGroup> out;
  for (auto& [name, g] : groups) out[name] = {five_number_summary(g.first), five_number_summary(g.second)};
  return out;
}

json to_json(const std::map<std::string, BoxGroup>& groups) {
  auto five = [](const FiveNumber& f) {
    return json{{"min", f.min}, {"q1", f.q1}, {"median", f.median}, {"q3", f.q3}, {"max", f.max}, {"n", f.n}};
  };
  json out = json::object();
  for (const auto& [name, g] : groups) out[name] = {{"before", five(g.before)}, {"after", five(g.after)}};
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string cell = c < cells.size() ? cells[c] : "";
      out << (c ? " | " : "") << cell << std::string(width[c] - cell.size(), ' ');
    }
    out << '\n';
  };
  line(header);
  for (std::size_t c = 0; c < width.size(); ++c) out << (c ? "-+-" : "") << std::string(width[c], '-');
  out << '\n';
  for (const auto& r : rows) line(r);
  return out.str();
}

}  // namespace caad::evalkit
