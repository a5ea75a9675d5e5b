#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace i3d {

// Flat `key = value` text. Blank lines and `#` comments are ignored; a line
// without `=` or with an empty key raises ConfigError citing the line number.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);

bool parse_bool(const std::string& key, const std::string& value);
long long parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);

}  // namespace i3d
