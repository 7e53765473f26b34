#pragma once

#include <string>
#include <vector>

namespace ebench::cli {

// Entry point behind the `ebench` binary. Exit codes: 0 success,
// 1 runtime/data error, 2 argument/config error.
int run(const std::vector<std::string>& args);

}  // namespace ebench::cli
