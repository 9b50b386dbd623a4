#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace weedout {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFatal = 1;
inline constexpr int kExitPartial = 2;
inline constexpr int kExitUsage = 64;

/// Runs one command line (without the program name). Results go to `out`,
/// diagnostics and usage text to `err`; log lines go to stderr, with the
/// level taken from WEEDOUT_LOG unless --log-level is given.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace weedout
