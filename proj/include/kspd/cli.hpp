#pragma once

#include <ostream>

namespace kspd {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // failed check or computational error
inline constexpr int kExitUsage = 2;

/// Entry point of the kspd tool. Subcommands: selftest, gradcheck, gen,
/// train, eval, extract, logm. Errors are reported on err as
/// "error: <module>: <message>".
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kspd
