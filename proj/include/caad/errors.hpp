#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace caad {

enum class Errc {
  EmptyInput,
  CorruptInput,
  DegenerateStats,
  ZeroSalt,
  ShapeError,
  NormError,
  EmptyBatch,
  NumericalError,
  ConfigError,
  UndefinedMetric,
  SplitOverlap,
  AbortNaN,
  NoOpRegion,
  NotFound,
  Conflict,
  OutOfScope,
  IoError,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, Errc code, const std::string& what) {
  if (!condition) raise(code, what);
}

/// Non-fatal diagnostics (zero-support F1, empty drop region, ...) go here.
void warn(std::string_view message);

using WarningSink = std::function<void(std::string_view)>;
/// Replaces the stderr sink; returns the previous one. An empty sink restores stderr.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace caad
