#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace imagerag::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1; // pipeline or model failure
inline constexpr int kExitUsage = 2;   // usage, config or input-format error

/// Entry point behind the `imagerag` binary. `args` excludes the program
/// name. Results go to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace imagerag::cli
