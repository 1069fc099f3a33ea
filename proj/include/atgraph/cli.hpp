#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace atgraph::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeFailure = 1;
inline constexpr int kUsageError = 2;

// Entry point for `crawl`, `analyze`, `report` and `mock-relay`. Every flag
// can also come from an ATGRAPH_<UPPER_SNAKE> environment variable or a flat
// `key = value` file named by --config; precedence is flag, env, file,
// built-in default.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace atgraph::cli
