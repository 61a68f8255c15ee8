// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>

namespace cpl::cli {

// Runs one command line and returns the exit code: 0 success, 1 runtime
// failure, 2 usage or validation error.
int run(int argc, const char* const argv[], std::ostream& out, std::ostream& err);

// Where train writes the concept cache next to a checkpoint.
std::filesystem::path cache_path_for(const std::filesystem::path& checkpoint);

}  // namespace cpl::cli
