#pragma once

#include <stdexcept>
#include <string>

namespace scenefuse {

enum class ErrorCode {
  kDegenerateDepth,
  kDegenerateInput,
  kDegenerateNorm,
  kDegenerateLabels,
  kShapeMismatch,
  kCapacity,
  kConvergenceFailure,
  kBadParam,
  kPartitionInfeasible,
  kPlacementFailure,
  kIo,
  kFormat,
  kConfig,
  kBridge,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace scenefuse
