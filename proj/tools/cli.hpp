#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace icodec::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Runs one command line (args[0] is the program name). Errors are printed to
/// `err` as "icodec: error: <message>" and mapped to the exit codes above.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace icodec::cli
