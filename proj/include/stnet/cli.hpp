#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stnet {

// Entry point of the `stnet` tool. Exit codes: 0 success, 1 invalid input
// (bad flag, config or data; failed gradcheck), 2 internal error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stnet
