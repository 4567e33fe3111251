#pragma once

#include <string>

namespace memeclf {

/// Whole file as bytes; throws IoError naming the path.
std::string read_file(const std::string& path);

/// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& contents);

/// Creates `path` and its parents; throws IoError when that fails.
void ensure_directory(const std::string& path);

}  // namespace memeclf
