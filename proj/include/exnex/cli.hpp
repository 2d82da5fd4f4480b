#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace exnex {

// Entry point of the `exnex` tool; args exclude the program name. Returns
// the process exit code: 0 success, 2 config error, 3 data error, 4 runtime
// error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace exnex
