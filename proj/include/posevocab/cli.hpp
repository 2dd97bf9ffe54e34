#pragma once

#include <iosfwd>

namespace posevocab {

// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitUsage = 2,
  kExitMissingInput = 3,
  kExitDimensionMismatch = 4,
  kExitParse = 5,
  kExitFormat = 6,
  kExitDiverged = 7,
  kExitInvalidInput = 8,
};

/// Runs one subcommand. Failures print a single line to `err`:
///   error: code=<name> exit=<n> message="<text>"
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace posevocab
