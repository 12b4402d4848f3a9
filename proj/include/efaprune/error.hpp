#pragma once

#include <stdexcept>
#include <string>

namespace efaprune {

// Stable numeric values: these are exported one-to-one through the C API.
enum class ErrorCode : int {
  invalid_argument = 1,
  shape_mismatch = 2,
  io = 3,
  bad_magic = 4,
  truncated = 5,
  count_mismatch = 6,
  unsupported_version = 7,
  integrity = 8,
  infeasible = 9,
  diverged = 10,
  numerical = 11,
  busy = 12,
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

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace efaprune
