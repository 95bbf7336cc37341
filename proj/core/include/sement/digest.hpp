#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace sement {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary, flushes, then renames over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

}  // namespace sement
