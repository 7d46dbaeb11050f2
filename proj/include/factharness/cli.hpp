#pragma once

#include <string>
#include <vector>

namespace factharness::cli {

// Subcommand entry point. Exit codes: 0 success, 1 validation/runtime
// failure, 2 usage errors (unknown subcommand or flag).
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args without the program name

}  // namespace factharness::cli
