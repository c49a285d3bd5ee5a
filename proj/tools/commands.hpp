#pragma once

#include "run_config.hpp"

#include <iosfwd>

namespace cellflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitStatistical = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

// Runs rc.command, writes its artifacts and returns the exit code. Library
// errors propagate to the caller.
int dispatch(const RunConfig& rc, std::ostream& log);

}  // namespace cellflow::cli
