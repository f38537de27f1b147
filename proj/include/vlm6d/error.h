#pragma once

#include <stdexcept>
#include <string>

namespace vlm6d {

enum class ErrorCode {
  kEmptyCloud,
  kInsufficientPoints,
  kNonPositiveDepth,
  kDegenerateRotation,
  kUndefinedRecall,
  kContract,
  kConfig,
  kIncompatibleWeights,
  kIngestion,
  kParse,
  kDegenerateSample,
  kNumericAbort,
  kIo,
};

const char *ErrorCodeName(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string &message);

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vlm6d
