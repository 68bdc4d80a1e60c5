#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace afford3d::cli {

enum ExitCode : int { kSuccess = 0, kFailure = 1, kUsage = 2 };

/// Runs the multiplexed command line. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace afford3d::cli
