#pragma once

#include <string>
#include <vector>

namespace rcpm::cli {

/// Exit codes shared by every subcommand.
enum Exit : int { kOk = 0, kUsage = 1, kNumerical = 2 };

/// Parses argv and dispatches to the subcommand. Never throws.
int run(int argc, char** argv);

}  // namespace rcpm::cli
