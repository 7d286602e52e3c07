#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace textsql::str {

/// ASCII lower-case copy. Identifier comparison in SQLite is ASCII-folded,
/// so this is the right fold for schema names.
std::string lower(std::string_view s);

/// Case-insensitive equality (ASCII fold).
bool iequals(std::string_view a, std::string_view b);

std::string trim(std::string_view s);

/// Collapse every whitespace run to a single space and trim the ends.
std::string collapse_ws(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);

bool is_space(char c);
bool is_word_char(char c); // [A-Za-z0-9_]

/// Byte offset of `needle` in `haystack` at or after `from`, case-insensitive.
/// Returns std::string::npos when absent.
size_t ifind(std::string_view haystack, std::string_view needle, size_t from = 0);

} // namespace textsql::str
