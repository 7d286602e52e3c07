#include <textsql/repr.hpp>
#include <textsql/strutil.hpp>

#include <array>
#include <optional>

namespace textsql::repr {

namespace {

constexpr std::array<std::string_view, 3> kTokens = {"[TABLE]", "[COLUMN]", "[VALUE]"};

std::optional<PlaceholderKind> kind_of_token(std::string_view token) {
    if (token == kTokens[0]) return PlaceholderKind::table;
    if (token == kTokens[1]) return PlaceholderKind::column;
    if (token == kTokens[2]) return PlaceholderKind::value;
    return std::nullopt;
}

} // namespace

std::string_view placeholder_token(PlaceholderKind kind) {
    return kTokens[static_cast<size_t>(kind)];
}

std::string reconstruct(const MaskedQuestion& masked) {
    std::string out;
    out.reserve(masked.text.size());
    size_t next = 0;
    size_t i = 0;
    const std::string& text = masked.text;
    while (i < text.size()) {
        bool replaced = false;
        if (text[i] == '[' && next < masked.alignment.size()) {
            for (auto token : kTokens) {
                if (text.compare(i, token.size(), token) == 0 &&
                    token == placeholder_token(masked.alignment[next].kind)) {
                    out += masked.alignment[next].span;
                    ++next;
                    i += token.size();
                    replaced = true;
                    break;
                }
            }
        }
        if (!replaced) {
            out.push_back(text[i]);
            ++i;
        }
    }
    return out;
}

namespace {

struct PlaceholderHit {
    size_t begin; // in masked text
    size_t end;
    PlaceholderKind kind;
};

// Bracketed upper-case tokens in the masked text. Tokens other than the three
// legal ones are illegal unless they occur verbatim in the original question
// (then they are just question text).
std::vector<PlaceholderHit> scan_placeholders(const std::string& original, const std::string& masked) {
    std::vector<PlaceholderHit> hits;
    size_t i = 0;
    while (i < masked.size()) {
        if (masked[i] != '[') {
            ++i;
            continue;
        }
        size_t j = i + 1;
        while (j < masked.size() && ((masked[j] >= 'A' && masked[j] <= 'Z') || masked[j] == '_')) ++j;
        if (j > i + 1 && j < masked.size() && masked[j] == ']') {
            const std::string_view token(masked.data() + i, j + 1 - i);
            if (auto kind = kind_of_token(token)) {
                hits.push_back({i, j + 1, *kind});
                i = j + 1;
                continue;
            }
            if (original.find(token) == std::string::npos)
                throw MaskError(MaskError::Kind::illegal_placeholder,
                                "illegal placeholder token " + std::string(token));
        }
        ++i;
    }
    return hits;
}

// Whitespace-elastic segment match: non-whitespace bytes must agree exactly,
// whitespace runs on either side are skipped freely. Returns the original
// position one past the matched content.
std::optional<size_t> try_match(const std::string& orig, size_t opos, const std::string& seg) {
    size_t i = opos, j = 0;
    while (j < seg.size()) {
        if (str::is_space(seg[j])) {
            while (j < seg.size() && str::is_space(seg[j])) ++j;
            while (i < orig.size() && str::is_space(orig[i])) ++i;
            continue;
        }
        if (i < orig.size() && str::is_space(orig[i])) {
            while (i < orig.size() && str::is_space(orig[i])) ++i;
            continue;
        }
        if (i >= orig.size() || orig[i] != seg[j]) return std::nullopt;
        ++i;
        ++j;
    }
    return i;
}

bool all_space(const std::string& s, size_t from, size_t to) {
    for (size_t i = from; i < to; ++i)
        if (!str::is_space(s[i])) return false;
    return true;
}

// Trim a gap range to the actual replaced span; empty result means the gap
// held only whitespace and is not a legal span.
std::optional<std::pair<size_t, size_t>> trim_gap(const std::string& orig, size_t b, size_t e) {
    while (b < e && str::is_space(orig[b])) ++b;
    while (e > b && str::is_space(orig[e - 1])) --e;
    if (b >= e) return std::nullopt;
    return std::make_pair(b, e);
}

struct SegmentMatcher {
    const std::string& orig;
    const std::vector<std::string>& segs; // segs.size() == placeholders + 1
    std::vector<std::pair<size_t, size_t>> gaps;
    size_t attempts = 0;
    static constexpr size_t kMaxAttempts = 200000;

    // Match segments segs[k..] given that segs[k-1] ended at opos; the gap for
    // placeholder k starts at opos. Candidate positions are tried left to
    // right, backtracking on failure.
    bool solve(size_t k, size_t opos) {
        if (++attempts > kMaxAttempts)
            throw MaskError(MaskError::Kind::mismatch, "mask alignment search exceeded budget");
        const size_t m = segs.size() - 1; // number of placeholders
        if (k > m) return all_space(orig, opos, orig.size());

        const std::string& seg = segs[k];
        const bool last = k == m;
        const bool effectively_empty = str::trim(seg).empty();

        if (effectively_empty) {
            if (last) {
                // placeholder at the very end: gap runs to the end of the question
                auto span = trim_gap(orig, opos, orig.size());
                if (!span) return false;
                gaps[k - 1] = *span;
                return true;
            }
            // Two placeholders separated by nothing but whitespace: the split
            // point is ambiguous, so prefer whitespace boundaries (start of a
            // word) and fall back to any position.
            for (int pass = 0; pass < 2; ++pass) {
                for (size_t p = opos + 1; p <= orig.size(); ++p) {
                    const bool at_boundary =
                        p == orig.size() ||
                        (p > 0 && str::is_space(orig[p - 1]) && !str::is_space(orig[p]));
                    if (pass == 0 && !at_boundary) continue;
                    if (pass == 1 && at_boundary) continue; // already tried
                    auto span = trim_gap(orig, opos, p);
                    if (!span) continue;
                    if (solve(k + 1, p)) {
                        gaps[k - 1] = *span;
                        return true;
                    }
                }
            }
            return false;
        }

        for (size_t p = opos; p <= orig.size(); ++p) {
            auto end = try_match(orig, p, seg);
            if (!end) continue;
            auto span = trim_gap(orig, opos, p);
            if (!span) continue; // span must be non-empty
            if (last && !all_space(orig, *end, orig.size())) continue;
            if (last || solve(k + 1, *end)) {
                gaps[k - 1] = *span;
                return true;
            }
        }
        return false;
    }
};

} // namespace

MaskedQuestion validate_mask(const std::string& original, const std::string& masked) {
    const auto hits = scan_placeholders(original, masked);

    if (hits.empty()) {
        // identity mask: the whole text must match modulo whitespace
        auto end = try_match(original, 0, masked);
        if (!end || !all_space(original, *end, original.size()))
            throw MaskError(MaskError::Kind::mismatch, "masked text does not match the question");
        return MaskedQuestion{masked, {}};
    }

    std::vector<std::string> segs;
    segs.reserve(hits.size() + 1);
    size_t prev = 0;
    for (const auto& h : hits) {
        segs.push_back(masked.substr(prev, h.begin - prev));
        prev = h.end;
    }
    segs.push_back(masked.substr(prev));

    SegmentMatcher matcher{original, segs, {}, 0};
    matcher.gaps.resize(hits.size());

    auto start = try_match(original, 0, segs[0]);
    if (!start || !matcher.solve(1, *start))
        throw MaskError(MaskError::Kind::mismatch,
                        "masked text is not obtainable from the question by span replacement");

    MaskedQuestion result{masked, {}};
    result.alignment.reserve(hits.size());
    for (size_t k = 0; k < hits.size(); ++k) {
        const auto [b, e] = matcher.gaps[k];
        result.alignment.push_back(MaskEntry{original.substr(b, e - b), hits[k].kind, b, e});
    }
    return result;
}

namespace {

bool ident_like(std::string_view s) {
    if (s.empty()) return false;
    if (!((s[0] >= 'a' && s[0] <= 'z') || (s[0] >= 'A' && s[0] <= 'Z') || s[0] == '_')) return false;
    for (char c : s)
        if (!str::is_word_char(c)) return false;
    return true;
}

std::string strip_quotes(std::string s) {
    auto strip = [&](char open, char close) {
        if (s.size() >= 2 && s.front() == open && s.back() == close) s = s.substr(1, s.size() - 2);
    };
    strip('`', '`');
    strip('"', '"');
    strip('[', ']');
    return s;
}

struct TargetRef {
    enum class Kind { table, column, literal } kind;
    std::string table;
    std::string column;
    std::string literal;
};

TargetRef resolve_target(const std::string& raw, const corpus::DatabaseSchema& schema) {
    const std::string target = str::trim(raw);
    const size_t dot = target.find('.');
    if (dot != std::string::npos) {
        const std::string left = strip_quotes(str::trim(target.substr(0, dot)));
        const std::string right = strip_quotes(str::trim(target.substr(dot + 1)));
        if (ident_like(left) && ident_like(right)) {
            const corpus::Table* t = schema.find_table(left);
            if (!t)
                throw CsmParseError(CsmParseError::Kind::unknown_schema_ref,
                                    "unknown table '" + left + "'");
            const corpus::Column* c = t->find_column(right);
            if (!c)
                throw CsmParseError(CsmParseError::Kind::unknown_schema_ref,
                                    "unknown column '" + left + "." + right + "'");
            return TargetRef{TargetRef::Kind::column, t->name, c->name, {}};
        }
    }
    const std::string bare = strip_quotes(target);
    if (ident_like(bare)) {
        if (const corpus::Table* t = schema.find_table(bare))
            return TargetRef{TargetRef::Kind::table, t->name, {}, {}};
    }
    return TargetRef{TargetRef::Kind::literal, {}, {}, target};
}

constexpr std::string_view kExtrasMarker = "Other tables and columns:";

} // namespace

SchemaMarkup parse_csm(const std::string& csm_text, const corpus::DatabaseSchema& schema) {
    SchemaMarkup markup;
    markup.text = csm_text;

    const size_t extras_at = str::ifind(csm_text, kExtrasMarker);
    const size_t tuple_region_end = extras_at == std::string::npos ? csm_text.size() : extras_at;

    size_t i = 0;
    while (i < tuple_region_end) {
        if (csm_text[i] != '(') {
            ++i;
            continue;
        }
        const size_t close = csm_text.find(')', i + 1);
        if (close == std::string::npos || close > tuple_region_end) break;
        const std::string content = csm_text.substr(i + 1, close - i - 1);
        const size_t comma = content.rfind(',');
        if (comma == std::string::npos) {
            i = close + 1; // parenthesized question text, not a tuple
            continue;
        }
        const std::string span = str::trim(content.substr(0, comma));
        const std::string target = str::trim(content.substr(comma + 1));
        if (span.empty() || target.empty())
            throw CsmParseError(CsmParseError::Kind::unparseable_tuple,
                                "unparseable tuple '(" + content + ")'");
        const TargetRef ref = resolve_target(target, schema);
        AnnotatedSpan link;
        link.span = span;
        switch (ref.kind) {
            case TargetRef::Kind::table:
                link.kind = PlaceholderKind::table;
                link.table = ref.table;
                break;
            case TargetRef::Kind::column:
                link.kind = PlaceholderKind::column;
                link.table = ref.table;
                link.column = ref.column;
                break;
            case TargetRef::Kind::literal:
                link.kind = PlaceholderKind::value;
                link.literal = ref.literal;
                break;
        }
        markup.links.push_back(std::move(link));
        i = close + 1;
    }

    if (extras_at != std::string::npos) {
        std::string rest = csm_text.substr(extras_at + kExtrasMarker.size());
        for (char& c : rest)
            if (c == '\n' || c == ';') c = ',';
        for (auto& part : str::split(rest, ',')) {
            std::string item = str::trim(part);
            while (!item.empty() && item.back() == '.') item.pop_back();
            if (item.empty()) continue;
            const TargetRef ref = resolve_target(item, schema);
            std::string canonical;
            if (ref.kind == TargetRef::Kind::table) canonical = ref.table;
            else if (ref.kind == TargetRef::Kind::column) canonical = ref.table + "." + ref.column;
            else
                throw CsmParseError(CsmParseError::Kind::unknown_schema_ref,
                                    "unknown schema item '" + item + "' in extras");
            bool dup = false;
            for (const auto& e : markup.extras)
                if (str::iequals(e, canonical)) { dup = true; break; }
            if (!dup) markup.extras.push_back(std::move(canonical));
        }
        if (markup.extras.size() > kMaxExtras)
            throw CsmParseError(CsmParseError::Kind::too_many_extras,
                                "markup lists " + std::to_string(markup.extras.size()) +
                                    " extra schema items (max " + std::to_string(kMaxExtras) + ")");
    }
    return markup;
}

bool LinkedSchema::has_table(std::string_view name) const {
    for (const auto& t : tables)
        if (str::iequals(t, name)) return true;
    return false;
}

bool LinkedSchema::has_column(std::string_view table, std::string_view column) const {
    for (const auto& [t, c] : columns)
        if (str::iequals(t, table) && str::iequals(c, column)) return true;
    return false;
}

LinkedSchema linked_schema(const SchemaMarkup& markup) {
    LinkedSchema out;
    for (const auto& link : markup.links) {
        switch (link.kind) {
            case PlaceholderKind::table:
                out.tables.insert(link.table);
                break;
            case PlaceholderKind::column:
                out.tables.insert(link.table);
                out.columns.emplace(link.table, link.column);
                break;
            case PlaceholderKind::value:
                break;
        }
    }
    for (const auto& extra : markup.extras) {
        const size_t dot = extra.find('.');
        if (dot == std::string::npos) {
            out.tables.insert(extra);
        } else {
            out.tables.insert(extra.substr(0, dot));
            out.columns.emplace(extra.substr(0, dot), extra.substr(dot + 1));
        }
    }
    return out;
}

std::string render_csm_text(const std::string& mask_text, std::span<const AnnotatedSpan> links,
                            std::span<const std::string> extras) {
    std::string out;
    out.reserve(mask_text.size() + links.size() * 16);
    size_t next = 0;
    size_t i = 0;
    while (i < mask_text.size()) {
        bool replaced = false;
        if (mask_text[i] == '[') {
            for (auto token : kTokens) {
                if (mask_text.compare(i, token.size(), token) == 0) {
                    if (next >= links.size())
                        throw ConfigError("render_csm_text: more placeholders than links");
                    const AnnotatedSpan& link = links[next];
                    std::string target;
                    switch (link.kind) {
                        case PlaceholderKind::table: target = link.table; break;
                        case PlaceholderKind::column: target = link.table + "." + link.column; break;
                        case PlaceholderKind::value: target = link.literal; break;
                    }
                    out += "(" + link.span + ", " + target + ")";
                    ++next;
                    i += token.size();
                    replaced = true;
                    break;
                }
            }
        }
        if (!replaced) {
            out.push_back(mask_text[i]);
            ++i;
        }
    }
    if (next != links.size()) throw ConfigError("render_csm_text: more links than placeholders");
    if (!extras.empty()) {
        out += "\n";
        out += kExtrasMarker;
        out += " ";
        for (size_t k = 0; k < extras.size(); ++k) {
            if (k) out += ", ";
            out += extras[k];
        }
    }
    return out;
}

} // namespace textsql::repr
