#pragma once

#include <string>
#include <vector>

namespace mmpop::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Entry point of the `mmpop` tool. Subcommands: synth, validate, split,
/// train, evaluate, predict. Returns 0 on success, 1 on a usage error
/// (bad flag, bad config), 2 on a data error (unreadable or malformed input).
int run(int argc, const char* const* argv);

/// Same, with the program name omitted.
int run(const std::vector<std::string>& args);

}  // namespace mmpop::cli
