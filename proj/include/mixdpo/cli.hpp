#pragma once

#include <iosfwd>

namespace mixdpo {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailed = 1;
inline constexpr int kExitRuntimeAbort = 2;
inline constexpr int kExitConfigError = 3;

/// Entry point of the `mixdpo` executable: subcommands generate, train,
/// eval, verify and overhead. Never throws; returns an exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mixdpo
