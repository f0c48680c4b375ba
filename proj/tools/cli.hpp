#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tender::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kOverflow = 4 };

/// Runs one command line (args excludes the program name). Reports go to
/// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace tender::cli
