#pragma once

#include <string>
#include <vector>

namespace sqp::cli {

/// Runs the `sqp` command line. Returns 0 on success and for --help, 2 for
/// invalid flags (usage printed to stderr) and 1 for runtime failures.
int run(int argc, const char* const* argv);

/// Convenience overload; args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace sqp::cli
