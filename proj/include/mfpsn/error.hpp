#pragma once

#include <stdexcept>
#include <string>

namespace mfpsn {

enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  LayoutUnsupported,
  UnknownEngine,
  NumericFailure,
  Io,
};

inline const char *to_string(ErrorCode code);

// Single exception type for the library; the code lets the CLI map failures
// onto exit statuses without string matching.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  // The message without the code prefix.
  const std::string &detail() const noexcept { return detail_; }

private:
  ErrorCode code_;
  std::string detail_;
};

inline const char *to_string(ErrorCode code) {
  switch (code) {
  case ErrorCode::InvalidArgument:
    return "invalid-argument";
  case ErrorCode::ShapeMismatch:
    return "shape-mismatch";
  case ErrorCode::LayoutUnsupported:
    return "layout-unsupported";
  case ErrorCode::UnknownEngine:
    return "unknown-engine";
  case ErrorCode::NumericFailure:
    return "numeric-failure";
  case ErrorCode::Io:
    return "io";
  }
  return "unknown";
}

} // namespace mfpsn
