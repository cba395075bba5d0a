#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "caad/errors.hpp"
#include "caad/spectral.hpp"

namespace caad::spectral {

namespace {

constexpr std::size_t kMaxDiagnostics = 5;

std::optional<EmissionRecord> parse_line(const std::string& line, std::string& why) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    why = "not a JSON object";
    return std::nullopt;
  }
  auto number = [&](const char* key, double& out) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number()) {
      why = std::string("missing numeric ") + key;
      return false;
    }
    out = it->get<double>();
    return true;
  };
  EmissionRecord r;
  if (!number("ts", r.ts) || !number("center_freq_hz", r.center_freq_hz) || !number("bandwidth_hz", r.bandwidth_hz))
    return std::nullopt;
  if (!std::isfinite(r.ts) || !(r.center_freq_hz > 0) || !(r.bandwidth_hz > 0) || !std::isfinite(r.center_freq_hz) ||
      !std::isfinite(r.bandwidth_hz)) {
    why = "ts must be finite and center_freq_hz, bandwidth_hz positive";
    return std::nullopt;
  }
  if (auto it = j.find("power_db"); it != j.end() && it->is_number()) r.power_db = it->get<double>();
  if (auto it = j.find("signal_type"); it != j.end() && it->is_string()) r.signal_type = it->get<std::string>();
  return r;
}

}  // namespace

ParseResult parse_emissions(std::istream& in) {
  ParseResult result;
  std::string line;
  std::size_t line_no = 0, seen = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++seen;
    std::string why;
    if (auto r = parse_line(line, why)) {
      result.records.push_back(std::move(*r));
    } else {
      ++result.skipped;
      if (result.diagnostics.size() < kMaxDiagnostics)
        result.diagnostics.push_back("line " + std::to_string(line_no) + ": " + why);
    }
  }
  if (seen == 0) raise(Errc::EmptyInput, "emission stream has no records");
  if (2 * result.skipped > seen) {
    std::string msg = std::to_string(result.skipped) + " of " + std::to_string(seen) + " lines malformed";
    for (const auto& d : result.diagnostics) msg += "; " + d;
    raise(Errc::CorruptInput, msg);
  }
  std::stable_sort(result.records.begin(), result.records.end(),
                   [](const EmissionRecord& a, const EmissionRecord& b) { return a.ts < b.ts; });
  return result;
}

ParseResult parse_emissions(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_emissions(in);
}

void write_emissions(std::ostream& out, std::span<const EmissionRecord> records) {
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["ts"] = r.ts;
    j["center_freq_hz"] = r.center_freq_hz;
    j["bandwidth_hz"] = r.bandwidth_hz;
    if (r.power_db) j["power_db"] = *r.power_db;
    if (r.signal_type) j["signal_type"] = *r.signal_type;
    out << j.dump() << '\n';
  }
}

}  // namespace caad::spectral
