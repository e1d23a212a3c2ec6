#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xmr {

enum class ErrorCode {
  InvalidConfig,
  InvalidArgument,
  DimensionMismatch,
  EmptyInput,
  OutOfRange,
  UnknownLanguage,
  DuplicateLanguage,
  Staging,
  NonFinite,
  Parse,
  Format,
  Io,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig: return "E_INVALID_CONFIG";
    case ErrorCode::InvalidArgument: return "E_INVALID_ARGUMENT";
    case ErrorCode::DimensionMismatch: return "E_DIMENSION_MISMATCH";
    case ErrorCode::EmptyInput: return "E_EMPTY_INPUT";
    case ErrorCode::OutOfRange: return "E_OUT_OF_RANGE";
    case ErrorCode::UnknownLanguage: return "E_UNKNOWN_LANGUAGE";
    case ErrorCode::DuplicateLanguage: return "E_DUPLICATE_LANGUAGE";
    case ErrorCode::Staging: return "E_STAGING";
    case ErrorCode::NonFinite: return "E_NON_FINITE";
    case ErrorCode::Parse: return "E_PARSE";
    case ErrorCode::Format: return "E_FORMAT";
    case ErrorCode::Io: return "E_IO";
  }
  return "E_UNKNOWN";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can print a stable prefix.
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

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace xmr
