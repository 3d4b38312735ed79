#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace lln::cli {

// Runs one command line. Errors are reported as a single line
// "error: <kind>: <message>" on `err`; the return value is the exit status
// (0 success, 1 runtime failure, 2 usage or configuration error).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lln::cli
