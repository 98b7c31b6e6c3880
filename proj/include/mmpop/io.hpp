#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace mmpop {

/// Writes `contents` to a sibling temporary file and renames it over `path`,
/// so readers never observe a partial file. Throws DataError on I/O failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Reads a whole file in binary mode. Throws DataError when unreadable.
std::string read_file(const std::filesystem::path& path);

}  // namespace mmpop
