#include "posevocab/error.hpp"

namespace posevocab {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid_input";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kParse: return "parse_error";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kChecksum: return "checksum_failure";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kIo: return "io_error";
  }
  return "unknown";
}

}  // namespace posevocab
