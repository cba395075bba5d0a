#include "caad/errors.hpp"

#include <iostream>
#include <mutex>

namespace caad {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::CorruptInput: return "CorruptInput";
    case Errc::DegenerateStats: return "DegenerateStats";
    case Errc::ZeroSalt: return "ZeroSalt";
    case Errc::ShapeError: return "ShapeError";
    case Errc::NormError: return "NormError";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::NumericalError: return "NumericalError";
    case Errc::ConfigError: return "ConfigError";
    case Errc::UndefinedMetric: return "UndefinedMetric";
    case Errc::SplitOverlap: return "SplitOverlap";
    case Errc::AbortNaN: return "AbortNaN";
    case Errc::NoOpRegion: return "NoOpRegion";
    case Errc::NotFound: return "NotFound";
    case Errc::Conflict: return "Conflict";
    case Errc::OutOfScope: return "OutOfScope";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

namespace {
std::mutex g_sink_mutex;
WarningSink g_sink;
}  // namespace

void warn(std::string_view message) {
  std::lock_guard lock(g_sink_mutex);
  if (g_sink) {
    g_sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(g_sink_mutex);
  std::swap(sink, g_sink);
  return sink;
}

}  // namespace caad
