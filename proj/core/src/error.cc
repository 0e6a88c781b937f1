#include "infl/error.h"

#include <utility>

namespace infl {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kHeaderMismatch: return "HeaderMismatch";
    case ErrorCode::kChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kInvalidParameter: return "InvalidParameter";
    case ErrorCode::kUnknownStrategy: return "UnknownStrategy";
    case ErrorCode::kNoTaskConfigured: return "NoTaskConfigured";
    case ErrorCode::kUnauthorized: return "Unauthorized";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kFutureVersion: return "FutureVersion";
    case ErrorCode::kUnknownItem: return "UnknownItem";
    case ErrorCode::kAcceptWithoutSuggestion: return "AcceptWithoutSuggestion";
    case ErrorCode::kLabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::kStoreFull: return "StoreFull";
    case ErrorCode::kSpecMismatch: return "SpecMismatch";
    case ErrorCode::kNoReviewedItems: return "NoReviewedItems";
    case ErrorCode::kNetwork: return "Network";
    case ErrorCode::kProtocol: return "Protocol";
    case ErrorCode::kInfeasible: return "Infeasible";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kParse: return "Parse";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
      code_(code) {}

Error::Error(ErrorCode code, const std::string& message,
             std::vector<FieldError> fields)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
      code_(code),
      fields_(std::move(fields)) {}

}  // namespace infl
