#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stk {

/// Rejection categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  kInvalidArgument = 2,
  kShapeMismatch = 3,
  kBadMagic = 4,
  kTruncated = 5,
  kNonFinite = 6,
  kEmptyInput = 7,
  kOutOfRange = 8,
  kIo = 9,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the category prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kShapeMismatch: return "shape mismatch";
    case ErrorKind::kBadMagic: return "bad magic";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kNonFinite: return "non-finite";
    case ErrorKind::kEmptyInput: return "empty input";
    case ErrorKind::kOutOfRange: return "out of range";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace stk
