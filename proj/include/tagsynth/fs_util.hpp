#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace tagsynth {

// Whole-file read; nullopt when the file cannot be opened.
std::optional<std::string> read_file(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace tagsynth
