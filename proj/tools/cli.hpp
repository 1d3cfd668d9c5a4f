#pragma once

#include <string>
#include <vector>

namespace hft::cli {

/// Dispatches one invocation (args exclude the program name).
/// Exit codes: 0 success, 1 usage error, 2 runtime error.
int run(const std::vector<std::string>& args);

}  // namespace hft::cli
