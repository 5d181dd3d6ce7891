#pragma once

namespace umi::cli {

// Entry point for the `umi` tool. Returns the process exit code:
// 0 success, 2 usage/config errors, 1 runtime failures.
int run(int argc, const char* const* argv);

} // namespace umi::cli
