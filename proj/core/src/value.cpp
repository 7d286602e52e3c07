#include <textsql/value.hpp>

#include <fmt/format.h>

namespace textsql {

namespace {

enum class Cls { null = 0, numeric = 1, text = 2, blob = 3 };

Cls cls_of(const Value& v) {
    switch (v.index()) {
        case 0: return Cls::null;
        case 1:
        case 2: return Cls::numeric;
        case 3: return Cls::text;
        default: return Cls::blob;
    }
}

// long double keeps all int64 values exact on x86-64.
long double as_num(const Value& v) {
    if (std::holds_alternative<int64_t>(v)) return static_cast<long double>(std::get<int64_t>(v));
    return static_cast<long double>(std::get<double>(v));
}

} // namespace

bool value_equal(const Value& a, const Value& b) {
    const Cls ca = cls_of(a), cb = cls_of(b);
    if (ca != cb) return false;
    switch (ca) {
        case Cls::null: return true;
        case Cls::numeric: return as_num(a) == as_num(b);
        case Cls::text: return std::get<std::string>(a) == std::get<std::string>(b);
        case Cls::blob: return std::get<Blob>(a) == std::get<Blob>(b);
    }
    return false;
}

bool value_less(const Value& a, const Value& b) {
    const Cls ca = cls_of(a), cb = cls_of(b);
    if (ca != cb) return ca < cb;
    switch (ca) {
        case Cls::null: return false;
        case Cls::numeric: return as_num(a) < as_num(b);
        case Cls::text: return std::get<std::string>(a) < std::get<std::string>(b);
        case Cls::blob: return std::get<Blob>(a).bytes < std::get<Blob>(b).bytes;
    }
    return false;
}

std::string value_to_text(const Value& v) {
    switch (v.index()) {
        case 0: return "";
        case 1: return std::to_string(std::get<int64_t>(v));
        case 2: return fmt::format("{}", std::get<double>(v));
        case 3: return std::get<std::string>(v);
        default: {
            const auto& bytes = std::get<Blob>(v).bytes;
            std::string hex = "x'";
            for (unsigned char b : bytes) hex += fmt::format("{:02x}", b);
            return hex + "'";
        }
    }
}

std::string value_to_prompt_text(const Value& v) {
    switch (v.index()) {
        case 0: return "NULL";
        case 3: return "'" + std::get<std::string>(v) + "'";
        default: return value_to_text(v);
    }
}

bool row_equal(const Row& a, const Row& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (!value_equal(a[i], b[i])) return false;
    return true;
}

bool row_less(const Row& a, const Row& b) {
    const size_t n = std::min(a.size(), b.size());
    for (size_t i = 0; i < n; ++i) {
        if (value_less(a[i], b[i])) return true;
        if (value_less(b[i], a[i])) return false;
    }
    return a.size() < b.size();
}

} // namespace textsql
