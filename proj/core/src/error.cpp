#include "protoseg/error.hpp"

namespace protoseg {

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kIo: return "I/O error";
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kNotFound: return "not found";
    case ErrorCode::kConfigMismatch: return "config mismatch";
    case ErrorCode::kInsufficientData: return "insufficient data";
    case ErrorCode::kDiverged: return "training diverged";
  }
  return "error";
}

}  // namespace protoseg
