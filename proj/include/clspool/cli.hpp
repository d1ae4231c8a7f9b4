#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace clspool {

inline constexpr int kExitSuccess = 0;
inline constexpr int kExitRuntimeError = 1;
inline constexpr int kExitUsageError = 2;

// Flat key=value lines; '#' starts a comment. Keys may repeat.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

// Entry point of the clspool tool; args exclude the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace clspool
