#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace topical {

std::uint64_t fnv1a64(std::string_view data);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace topical
