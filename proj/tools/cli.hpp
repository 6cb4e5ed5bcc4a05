#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hybridcap {

// Entry point shared by the binary and the tests. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hybridcap
