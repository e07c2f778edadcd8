#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace sprag {

using json = nlohmann::json;

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records);

// Directory-safe rendering of an identifier: anything outside [A-Za-z0-9._-]
// becomes '_'.
std::string safe_path_component(std::string_view s);

// One compact JSON object per line; dump settings are shared so output is byte-stable.
std::string to_jsonl_line(const json& record);

}  // namespace sprag
