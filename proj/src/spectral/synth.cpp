#include <algorithm>
#include <cmath>
#include <limits>

#include "caad/errors.hpp"
#include "caad/rng.hpp"
#include "caad/spectral.hpp"

namespace caad::spectral {

void SynthScenario::validate() const {
  require(duration_s > 0, Errc::ConfigError, "scenario duration must be positive");
  for (std::size_t i = 0; i < emitters.size(); ++i) {
    const auto& e = emitters[i];
    const std::string who = "emitter " + std::to_string(i);
    require(e.packet_rate_hz > 0, Errc::ConfigError, who + ": packet_rate_hz must be positive");
    require(e.center_freq_hz > 0 && e.bandwidth_hz > 0, Errc::ConfigError, who + ": frequency and bandwidth must be positive");
    require(e.emit_prob >= 0 && e.emit_prob <= 1, Errc::ConfigError, who + ": emit_prob must be in [0,1]");
    require(e.duty_period_s >= 0 && e.duty_on_fraction >= 0 && e.duty_on_fraction <= 1, Errc::ConfigError,
            who + ": invalid duty cycle");
  }
  for (const auto& h : hopper_events) {
    require(h.t >= 0 && h.t < duration_s, Errc::ConfigError, "hopper event outside scenario duration");
    require(h.signature_id < hopper_library_hz.size(), Errc::ConfigError, "hopper event names an unknown signature");
  }
  for (const auto& d : drop_events) {
    require(d.t >= 0 && d.t < duration_s, Errc::ConfigError, "drop event outside scenario duration");
    require(d.emitter_id < emitters.size(), Errc::ConfigError, "drop event names an unknown emitter");
  }
}

std::vector<EmissionRecord> synth_generate(const SynthScenario& scenario) {
  scenario.validate();
  std::vector<EmissionRecord> out;
  for (std::size_t id = 0; id < scenario.emitters.size(); ++id) {
    const Emitter& e = scenario.emitters[id];
    double silent_from = std::min(e.end_s, scenario.duration_s);
    for (const auto& d : scenario.drop_events)
      if (d.emitter_id == id) silent_from = std::min(silent_from, d.t);
    Rng rng = derive_rng(scenario.seed, id + 1);
    for (std::uint64_t k = 0;; ++k) {
      const double t = e.start_s + static_cast<double>(k) / e.packet_rate_hz;
      if (t >= silent_from) break;
      // Draws are consumed for every scheduled slot so the streams stay aligned across duty cycles.
      const double keep = uniform01(rng);
      const double zf = standard_normal(rng), zb = standard_normal(rng), zp = standard_normal(rng);
      if (e.duty_period_s > 0) {
        const double phase = std::fmod(t - e.duty_phase_s + 1e6 * e.duty_period_s, e.duty_period_s);
        if (phase >= e.duty_on_fraction * e.duty_period_s) continue;
      }
      if (keep >= e.emit_prob) continue;
      EmissionRecord r;
      r.ts = t;
      r.center_freq_hz = e.center_freq_hz + e.freq_jitter_hz * zf;
      r.bandwidth_hz = e.bandwidth_hz + e.bw_jitter_hz * zb;
      if (!(r.bandwidth_hz > 0)) r.bandwidth_hz = e.bandwidth_hz;
      if (!(r.center_freq_hz > 0)) r.center_freq_hz = e.center_freq_hz;
      r.power_db = std::round((-70.0 + 4.0 * zp) * 100.0) / 100.0;
      r.signal_type = e.name;
      out.push_back(std::move(r));
    }
  }
  for (const auto& h : scenario.hopper_events) {
    for (const auto& [f, bw] : scenario.hopper_library_hz[h.signature_id]) {
      EmissionRecord r;
      r.ts = h.t;
      r.center_freq_hz = f;
      r.bandwidth_hz = bw;
      r.signal_type = "hopper";
      out.push_back(std::move(r));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const EmissionRecord& a, const EmissionRecord& b) { return a.ts < b.ts; });
  return out;
}

SynthScenario desk_scenario(const GridSpec& spec, std::size_t n_windows, std::uint64_t seed) {
  spec.validate();
  const double df = (spec.freq_max_hz - spec.freq_min_hz) / static_cast<double>(spec.n_freq_bins);
  const double db = (spec.bw_max_hz - spec.bw_min_hz) / static_cast<double>(spec.n_bw_bins);
  // Positions are given as fractions of the band and snapped to cell centres.
  auto freq_at = [&](double frac) {
    return spec.freq_center(std::clamp<Index>(static_cast<Index>(frac * spec.n_freq_bins), 0, spec.n_freq_bins - 1));
  };
  auto bw_at = [&](double frac) {
    return spec.bw_center(std::clamp<Index>(static_cast<Index>(frac * spec.n_bw_bins), 0, spec.n_bw_bins - 1));
  };
  const double per_window = 1.0 / spec.window_s;
  SynthScenario s;
  s.duration_s = static_cast<double>(n_windows) * spec.window_s;
  s.seed = seed;

  Emitter beacon;
  beacon.name = "beacon";
  beacon.center_freq_hz = freq_at(0.50);
  beacon.bandwidth_hz = bw_at(0.25);
  beacon.packet_rate_hz = 14 * per_window;
  beacon.start_s = 0.5 / beacon.packet_rate_hz;
  beacon.freq_jitter_hz = 0.02 * df;
  beacon.bw_jitter_hz = 0.02 * db;
  s.emitters.push_back(beacon);

  Emitter lora;
  lora.name = "lora-narrow";
  lora.center_freq_hz = freq_at(0.08);
  lora.bandwidth_hz = bw_at(0.06);
  lora.packet_rate_hz = 20 * per_window;
  lora.emit_prob = 0.7;
  lora.freq_jitter_hz = 0.35 * df;
  lora.bw_jitter_hz = 0.1 * db;
  s.emitters.push_back(lora);

  Emitter lora_wide;
  lora_wide.name = "lora-wide";
  lora_wide.center_freq_hz = freq_at(0.20);
  lora_wide.bandwidth_hz = bw_at(0.12);
  lora_wide.packet_rate_hz = 16 * per_window;
  lora_wide.duty_period_s = 5 * spec.window_s;
  lora_wide.duty_on_fraction = 0.5;
  lora_wide.freq_jitter_hz = 0.2 * df;
  lora_wide.bw_jitter_hz = 0.2 * db;
  s.emitters.push_back(lora_wide);

  Emitter wifi;
  wifi.name = "wideband";
  wifi.center_freq_hz = freq_at(0.38);
  wifi.bandwidth_hz = bw_at(0.60);
  wifi.packet_rate_hz = 30 * per_window;
  wifi.emit_prob = 0.8;
  wifi.freq_jitter_hz = 0.3 * df;
  wifi.bw_jitter_hz = 0.8 * db;
  s.emitters.push_back(wifi);

  Emitter burst;
  burst.name = "bursty";
  burst.center_freq_hz = freq_at(0.70);
  burst.bandwidth_hz = bw_at(0.80);
  burst.packet_rate_hz = 16 * per_window;
  burst.duty_period_s = 20 * spec.window_s;
  burst.duty_on_fraction = 0.3;
  burst.duty_phase_s = 3 * spec.window_s;
  burst.freq_jitter_hz = 0.25 * df;
  burst.bw_jitter_hz = 0.25 * db;
  s.emitters.push_back(burst);

  Emitter narrow;
  narrow.name = "telemetry";
  narrow.center_freq_hz = freq_at(0.90);
  narrow.bandwidth_hz = bw_at(0.02);
  narrow.packet_rate_hz = 22 * per_window;
  narrow.emit_prob = 0.9;
  narrow.freq_jitter_hz = 0.5 * df;
  narrow.bw_jitter_hz = 0.05 * db;
  s.emitters.push_back(narrow);

  Emitter sporadic;
  sporadic.name = "sporadic";
  sporadic.center_freq_hz = freq_at(0.62);
  sporadic.bandwidth_hz = bw_at(0.35);
  sporadic.packet_rate_hz = 4 * per_window;
  sporadic.emit_prob = 0.6;
  sporadic.freq_jitter_hz = 1.2 * df;
  sporadic.bw_jitter_hz = 1.2 * db;
  s.emitters.push_back(sporadic);

  // Rare full-scale windows: the global max is 98 while typical windows peak near 15-20.
  Emitter surge;
  surge.name = "surge";
  surge.center_freq_hz = freq_at(0.30);
  surge.bandwidth_hz = bw_at(0.45);
  surge.packet_rate_hz = 98 * per_window;
  surge.start_s = 0.5 / surge.packet_rate_hz;
  surge.duty_period_s = 10 * spec.window_s;
  surge.duty_on_fraction = 0.1;
  surge.duty_phase_s = 4 * spec.window_s;
  s.emitters.push_back(surge);

  return s;
}

}  // namespace caad::spectral
