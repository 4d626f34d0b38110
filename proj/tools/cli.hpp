#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace muvi::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int { ok = 0, failure = 1, config_error = 2, numerical_error = 3 };

/// Parses `args` (without the program name) and runs the selected command.
int run(const std::vector<std::string>& args);

/// Git blob object id ("blob <size>\0<content>" hashed with SHA-1) of a file.
std::string git_blob_sha1(const std::filesystem::path& path);

}  // namespace muvi::cli
