#pragma once

#include <iosfwd>

namespace protoseg::cli {

/// Runs the protoseg command line. Returns the process exit code: 0 on success,
/// ErrorCode values for library errors, 2 for usage errors and 1 for anything else.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace protoseg::cli
