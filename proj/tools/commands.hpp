#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace shelfnet::cli {

// Runs one command line (args excludes the program name) and returns the
// process exit code: 0 on success, 1 when the command failed, 2 for
// invalid usage or configuration.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace shelfnet::cli
