#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cslid {

/// Runs one command. `args` excludes the program name. Returns the process
/// exit code: 0 success, 1 validation or usage error, 2 runtime error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cslid
