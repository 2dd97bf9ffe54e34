#pragma once

#include <stdexcept>
#include <string>

namespace posevocab {

enum class ErrorCode {
  kInvalidInput,
  kDimensionMismatch,
  kParse,
  kNonFinite,
  kVersionMismatch,
  kChecksum,
  kTruncated,
  kIo,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace posevocab
