#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace opom {

enum class ErrorCode {
  InvalidInput,
  InternalError,
  MalformedHeader,
  TruncatedPayload,
  KindMismatch,
  ShapeMismatch,
  IntegrityError,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, const std::string& what) {
  if (!condition) fail(ErrorCode::InvalidInput, what);
}

}  // namespace opom
