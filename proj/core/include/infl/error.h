#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace infl {

enum class ErrorCode {
  kInvalidSpec,
  kBadMagic,
  kHeaderMismatch,
  kChecksumMismatch,
  kNonFiniteValue,
  kDimensionMismatch,
  kLengthMismatch,
  kEmptyBatch,
  kEmptyDataset,
  kNonFiniteLoss,
  kInvalidParameter,
  kUnknownStrategy,
  kNoTaskConfigured,
  kUnauthorized,
  kInvalidConfig,
  kFutureVersion,
  kUnknownItem,
  kAcceptWithoutSuggestion,
  kLabelOutOfRange,
  kStoreFull,
  kSpecMismatch,
  kNoReviewedItems,
  kNetwork,
  kProtocol,
  kInfeasible,
  kIo,
  kParse,
};

std::string_view error_code_name(ErrorCode code);

// One rejected field of a configuration, reported back to the admin.
struct FieldError {
  std::string field;
  std::string message;
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  Error(ErrorCode code, const std::string& message,
        std::vector<FieldError> fields);

  ErrorCode code() const noexcept { return code_; }
  const std::vector<FieldError>& fields() const noexcept { return fields_; }

 private:
  ErrorCode code_;
  std::vector<FieldError> fields_;
};

}  // namespace infl
