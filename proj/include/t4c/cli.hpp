#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace t4c {

/// Runs the `t4c` command line. Returns the process exit code: 0 success, 1 validation
/// error (bad input, config or missing prerequisite), 2 runtime failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace t4c
