#include "vlm6d/error.h"

namespace vlm6d {

const char *ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyCloud: return "empty-cloud";
    case ErrorCode::kInsufficientPoints: return "insufficient-points";
    case ErrorCode::kNonPositiveDepth: return "non-positive-depth";
    case ErrorCode::kDegenerateRotation: return "degenerate-rotation";
    case ErrorCode::kUndefinedRecall: return "undefined-recall";
    case ErrorCode::kContract: return "contract";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIncompatibleWeights: return "incompatible-weights";
    case ErrorCode::kIngestion: return "ingestion";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kDegenerateSample: return "degenerate-sample";
    case ErrorCode::kNumericAbort: return "numeric-abort";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string &message)
    : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
      code_(code) {}

}  // namespace vlm6d
