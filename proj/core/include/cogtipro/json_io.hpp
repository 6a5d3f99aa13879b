// SPDX-License-Identifier: Apache-2.0
#pragma once

// Internal JSON helpers shared by the I/O code. Not installed as public API
// in spirit, but kept in the include tree so tools can reuse the converters.

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

#include "cogtipro/records.hpp"

namespace cogtipro::json_io {

using nlohmann::json;

json to_json(const CommandRecord& r);
CommandRecord command_from_json(const json& j);

/// Calls `fn` for each non-blank line parsed as JSON. Parse failures raise
/// IngestionError naming the file and line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, std::size_t)>& fn);

json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path,
                     const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace cogtipro::json_io
