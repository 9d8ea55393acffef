#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace topical::io {

std::string read_file(const std::filesystem::path& path);

// Writes via a temporary file and rename, creating parent directories.
void write_file(const std::filesystem::path& path, const std::string& content);

// Parses one JSON value per non-empty line. Errors carry "path:line".
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);

std::string dump_json(const nlohmann::json& j, int indent = 2);
std::string dump_json(const nlohmann::ordered_json& j, int indent = 2);

}  // namespace topical::io
