#pragma once

#include <stdexcept>
#include <string>

namespace protoseg {

// Categories map one-to-one onto CLI exit codes.
enum class ErrorCode : int {
  kInvalidArgument = 10,
  kIo = 11,
  kFormat = 12,
  kNotFound = 13,
  kConfigMismatch = 14,
  kInsufficientData = 15,
  kDiverged = 16,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }
  int exit_code() const noexcept { return static_cast<int>(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

const char* to_string(ErrorCode code);

}  // namespace protoseg
