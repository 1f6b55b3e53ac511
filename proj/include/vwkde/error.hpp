#pragma once

#include <stdexcept>
#include <string>

namespace vwkde {

enum class ErrorCode {
  InvalidData,
  InvalidConfig,
  DegenerateModel,
  InsufficientData,
  NumericFailure,
  UndefinedPosterior,
  DegenerateDirection,
  DegenerateFeatures,
  Parse,
  Io,
};

const char* to_string(ErrorCode code);

/// Single exception type for the library; the code tells callers which
/// contract was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// Message without the code prefix, for callers that add context and rethrow.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace vwkde
