#include "objslam/error.hpp"

namespace objslam {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::kZeroAxis: return "ZeroAxis";
    case ErrorCode::kSingularCovariance: return "SingularCovariance";
    case ErrorCode::kEmptyValidSet: return "EmptyValidSet";
    case ErrorCode::kAllBehindCamera: return "AllBehindCamera";
    case ErrorCode::kNotVisible: return "NotVisible";
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kTooFewCorrespondences: return "TooFewCorrespondences";
    case ErrorCode::kNoConsensus: return "NoConsensus";
    case ErrorCode::kNotConverged: return "NotConverged";
    case ErrorCode::kNoCameraPose: return "NoCameraPose";
    case ErrorCode::kEmptyCloud: return "EmptyCloud";
    case ErrorCode::kEmptyList: return "EmptyList";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kInfeasibleScene: return "InfeasibleScene";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace objslam
