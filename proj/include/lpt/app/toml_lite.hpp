#pragma once

#include <string>
#include <string_view>

#include "json.hpp"

namespace lpt::app::toml {

/// Parses the subset of TOML used by run configs:
///
///   # comment
///   top_key = 1
///   [section]
///   key = "string"      # basic strings with \" \\ \n \t escapes
///   n = 3               # integers
///   x = 7.5e-4          # floats
///   flag = true
///   list = [1, 2.5, "a"]  # arrays may span lines
///
/// Returns {"key": value, "section": {"key": value, ...}}. Duplicate keys or
/// sections, dotted keys and inline tables are ConfigErrors naming the line.
nlohmann::ordered_json parse(std::string_view text, const std::string& origin = "<config>");

nlohmann::ordered_json parse_file(const std::string& path);

/// A TOML literal for a scalar or array JSON value. Floats keep full
/// precision and always carry a '.' or exponent.
std::string format_value(const nlohmann::ordered_json& v);

}  // namespace lpt::app::toml
