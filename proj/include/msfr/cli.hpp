#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace msfr {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Entry point for the `msfr` tool. `args[0]` is the program name.
/// Subcommands: gen-data, train, detect, eval, gradcheck, ablate.
/// Returns 0 on success, 2 on a usage or configuration error, 1 when the run
/// itself fails; files written by a failed run are removed.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace msfr
