#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace lpt::app {

/// Writes `content` to `path` via a temporary sibling and rename, so readers
/// never see a partial file. Creates missing parent directories.
void atomic_write(const std::string& path, const std::string& content);

/// One compact JSON document per line.
std::string to_jsonl(const std::vector<nlohmann::ordered_json>& rows);

std::string read_text(const std::string& path);

}  // namespace lpt::app
