#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace objslam {

enum class ErrorCode {
  kNonPositiveDepth,
  kZeroAxis,
  kSingularCovariance,
  kEmptyValidSet,
  kAllBehindCamera,
  kNotVisible,
  kDegenerateConfiguration,
  kTooFewCorrespondences,
  kNoConsensus,
  kNotConverged,
  kNoCameraPose,
  kEmptyCloud,
  kEmptyList,
  kLengthMismatch,
  kInfeasibleScene,
  kInvalidArgument,
  kParseError,
  kIoError,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-readable error code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace objslam
