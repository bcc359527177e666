#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ctm::cli {

/// Runs the command line with argv-style arguments (args[0] is the program
/// name). Returns the process exit code: 0 on success, 1 when a benchmark
/// cell failed, 2 on usage or input errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctm::cli
