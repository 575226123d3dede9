#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace npeb {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumerical = 3,
};

/// Runs the tool on `args` (without the program name). Results go to files
/// under --output-dir or to `out`; diagnostics and errors go to `err` as
/// `LEVEL key=value ...` lines.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

}  // namespace npeb
