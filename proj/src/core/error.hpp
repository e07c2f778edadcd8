#pragma once

#include <stdexcept>
#include <string>

namespace sprag {

// Stable error categories. The C API maps these one-to-one onto sprag_status_t.
enum class ErrorCode {
  InvalidArgument = 1,
  Schema,
  Row,
  Io,
  InsufficientData,
  Transport,
  Dimension,
  Normalization,
  UndefinedSimilarity,
  Generation,
  Validation,
  NotFound,
  NoSignal,
  InsufficientPairs,
  LengthMismatch,
  IncompleteGrid,
  Config,
  Unavailable,
  Locked,
  Internal,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace sprag
