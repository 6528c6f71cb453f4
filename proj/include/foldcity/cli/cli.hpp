#pragma once

#include <string>
#include <vector>

namespace foldcity::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int { kSuccess = 0, kUsageError = 1, kDataError = 2, kNumericError = 3 };

/// Runs one pipeline command. `args` excludes the program name. Appends a
/// stage record to the manifest on success.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace foldcity::cli
