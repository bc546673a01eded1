#include "protoforge/error.hpp"

namespace protoforge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kZeroRow: return "ZeroRow";
    case ErrorCode::kNoConvergence: return "NoConvergence";
    case ErrorCode::kBadTemplate: return "BadTemplate";
    case ErrorCode::kEmptyText: return "EmptyText";
    case ErrorCode::kRankTooLarge: return "RankTooLarge";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kRankDeficient: return "RankDeficient";
    case ErrorCode::kDivergedLoss: return "DivergedLoss";
    case ErrorCode::kEmptyAssignment: return "EmptyAssignment";
    case ErrorCode::kNotNormalized: return "NotNormalized";
    case ErrorCode::kInfeasibleConfusion: return "InfeasibleConfusion";
    case ErrorCode::kEmptyClassPool: return "EmptyClassPool";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kParse: return "Parse";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      detail_(message) {}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace protoforge
