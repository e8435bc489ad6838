#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bms::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,     // bad arguments or configuration
  kData = 3,      // unreadable or inconsistent data / checkpoint files
  kDiverged = 4,  // training aborted on non-finite losses
};

/// Entry point of the `bms` tool; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bms::cli
