#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vistrack {

// Entry point behind main(). args excludes the program name:
//   <subcommand> [--config FILE] [--key VALUE]...
// where <subcommand> is one of gen-data, train, infer, eval, render and every
// --key matches a config key. Human-readable output goes to `out`, failures
// to `err`. Returns the process exit status: 0 only when the requested
// artifact was fully written.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string cli_usage();

}  // namespace vistrack
