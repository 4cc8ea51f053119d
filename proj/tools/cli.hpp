#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace leafnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerification = 1;
inline constexpr int kExitDivergence = 2;
inline constexpr int kExitUsage = 64;

/// Runs the command line `args` (without the program name). Normal output
/// goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Flat `key = value` file; blank lines and `#` comments are skipped.
std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path);

} // namespace leafnet::cli
