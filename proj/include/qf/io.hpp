#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace qf {

// Writes via a sibling temporary file and rename, so readers never observe a
// partially written file.
void atomic_write_file(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace qf
