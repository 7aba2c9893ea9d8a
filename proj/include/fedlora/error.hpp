#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedlora {

enum class ErrorCode {
  kInvalidDimensions,
  kShapeMismatch,
  kEmptyUpdateList,
  kFrozenViolation,
  kSolverDiverged,
  kIntractableInstance,
  kNoConvergence,
  kInvalidSpec,
  kInsufficientSamples,
  kDivergenceDetected,
  kEmptyTestSet,
  kParseError,
  kValidationError,
  kMissingArtifacts,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// True for failures caused by numerics rather than by user input.
bool is_numeric_failure(ErrorCode code);

}  // namespace fedlora
