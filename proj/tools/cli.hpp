#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dejavu::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kValidation = 2,
  kAlignment = 3,
  kDivergence = 4,
};

/// Parses `args` (without the program name) and runs one subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dejavu::cli
