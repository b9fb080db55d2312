#include "scenefuse/error.hpp"

namespace scenefuse {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kDegenerateDepth: return "DEGENERATE_DEPTH";
    case ErrorCode::kDegenerateInput: return "DEGENERATE_INPUT";
    case ErrorCode::kDegenerateNorm: return "DEGENERATE_NORM";
    case ErrorCode::kDegenerateLabels: return "DEGENERATE_LABELS";
    case ErrorCode::kShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::kCapacity: return "CAPACITY";
    case ErrorCode::kConvergenceFailure: return "CONVERGENCE_FAILURE";
    case ErrorCode::kBadParam: return "BAD_PARAM";
    case ErrorCode::kPartitionInfeasible: return "PARTITION_INFEASIBLE";
    case ErrorCode::kPlacementFailure: return "PLACEMENT_FAILURE";
    case ErrorCode::kIo: return "IO_ERROR";
    case ErrorCode::kFormat: return "FORMAT_ERROR";
    case ErrorCode::kConfig: return "CONFIG_ERROR";
    case ErrorCode::kBridge: return "BRIDGE_ERROR";
  }
  return "UNKNOWN";
}

}  // namespace scenefuse
