#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace textsql {

/// A scalar cell value as read from SQLite. Blobs are kept as raw bytes.
struct Blob {
    std::vector<unsigned char> bytes;
    bool operator==(const Blob&) const = default;
};

/// monostate encodes SQL NULL.
using Value = std::variant<std::monostate, int64_t, double, std::string, Blob>;

/// Row-level equality: NULL == NULL, numerics compare numerically across
/// int/real (1 == 1.0), text and blobs compare byte-wise.
bool value_equal(const Value& a, const Value& b);

/// Strict weak ordering consistent with value_equal, used to sort rows
/// for multiset comparison. Orders by class (null < numeric < text < blob),
/// then within class.
bool value_less(const Value& a, const Value& b);

/// Render a value the way it would appear in a prompt: strings single-quoted,
/// integers without a decimal point, NULL as NULL.
std::string value_to_prompt_text(const Value& v);

/// Bare text of the value (no quoting); empty string for NULL.
std::string value_to_text(const Value& v);

using Row = std::vector<Value>;

bool row_equal(const Row& a, const Row& b);
bool row_less(const Row& a, const Row& b);

} // namespace textsql
