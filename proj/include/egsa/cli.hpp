#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace egsa {

/// Exit codes: 0 success, 1 runtime failure, 2 invalid arguments or configuration.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace egsa
