#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace protoforge {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kDimensionMismatch,
  kZeroRow,
  kNoConvergence,
  kBadTemplate,
  kEmptyText,
  kRankTooLarge,
  kNonFinite,
  kRankDeficient,
  kDivergedLoss,
  kEmptyAssignment,
  kNotNormalized,
  kInfeasibleConfusion,
  kEmptyClassPool,
  kIo,
  kParse,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so the
// command-line front end can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  // The message without the "<Code>: " prefix that what() carries.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace protoforge
