#pragma once

// Command-line front end: synth, train, predict and eval subcommands.
// Exit codes: 0 success, 2 usage, configuration or data error, 3 numerical
// failure during training.

#include <iosfwd>

namespace tilemark::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tilemark::cli
