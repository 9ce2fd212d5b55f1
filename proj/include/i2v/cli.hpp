#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace i2v::cli {

// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,           // I/O or internal error
  kMissingCheckpoint = 2, // a required checkpoint, dataset or sample directory is absent
  kConfigInvalid = 3,     // message names the offending field
  kNumericFailure = 4,    // non-finite values, divergence
  kUsage = 64,            // malformed command line
};

// Parses `args` (without the program name) and runs one command.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace i2v::cli
