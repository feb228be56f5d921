#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace seam::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Runs one subcommand of: train | reengineer | finetune | attack | eval |
/// flops | bench | export-sparse | report. `args` excludes the program
/// name. Summaries go to `out`, error messages to `err`; artifacts are
/// written under the command's output directory via temp-file + rename.
/// Exit codes: 0 success, 1 usage error, 2 data/validation error,
/// 3 numerical failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
            std::ostream& err = std::cerr);

} // namespace seam::cli
