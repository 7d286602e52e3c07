#pragma once

#include <textsql/corpus.hpp>
#include <textsql/errors.hpp>

#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace textsql::repr {

enum class PlaceholderKind { table, column, value };

/// The exact placeholder token, matched case-sensitively: "[TABLE]",
/// "[COLUMN]" or "[VALUE]".
std::string_view placeholder_token(PlaceholderKind kind);

struct MaskEntry {
    std::string span;     // original question text the placeholder replaced
    PlaceholderKind kind;
    size_t begin = 0;     // byte range of the span in the original question
    size_t end = 0;
};

/// A question with database-related spans replaced by placeholder tokens.
/// Alignment entries appear in the same order as the placeholders in `text`.
struct MaskedQuestion {
    std::string text;
    std::vector<MaskEntry> alignment;
};

/// Substitute each placeholder in `masked.text` with its recorded span, in
/// order. For masks whose kept segments match the original byte-for-byte this
/// reconstructs the original question exactly.
std::string reconstruct(const MaskedQuestion& masked);

class MaskError : public Error {
public:
    enum class Kind { mismatch, illegal_placeholder };
    MaskError(Kind kind, const std::string& what) : Error(what), kind(kind) {}
    Kind kind;
};

/// Check that `masked` is obtainable from `original` by replacing disjoint,
/// non-empty spans with the three placeholder tokens, and recover the span
/// alignment. Whitespace-only differences between kept segments are
/// tolerated. Throws MaskError (mismatch / illegal_placeholder).
MaskedQuestion validate_mask(const std::string& original, const std::string& masked);

struct AnnotatedSpan {
    std::string span;
    PlaceholderKind kind;
    std::string table;   // kind table or column
    std::string column;  // kind column
    std::string literal; // kind value, stored verbatim
};

inline constexpr size_t kMaxExtras = 10;

/// Parsed contextual markup: the replaced question, its span->schema links in
/// document order, and up to kMaxExtras appended schema items
/// ("table" or "table.column", canonical casing).
struct SchemaMarkup {
    std::string text;
    std::vector<AnnotatedSpan> links;
    std::vector<std::string> extras;
};

class CsmParseError : public Error {
public:
    enum class Kind { unparseable_tuple, unknown_schema_ref, too_many_extras };
    CsmParseError(Kind kind, const std::string& what) : Error(what), kind(kind) {}
    Kind kind;
};

/// Parse "(span, target)" tuples and the optional trailing
/// "Other tables and columns:" section, resolving every schema reference
/// against `schema`. Parenthesized question text without a comma is left
/// alone. Throws CsmParseError.
SchemaMarkup parse_csm(const std::string& csm_text, const corpus::DatabaseSchema& schema);

/// Tables and table.columns referenced by a markup: union of link targets and
/// extras; VALUE links contribute nothing; a column implies its table.
struct LinkedSchema {
    std::set<std::string> tables;                          // canonical names
    std::set<std::pair<std::string, std::string>> columns; // (table, column)

    bool empty() const { return tables.empty() && columns.empty(); }
    bool has_table(std::string_view name) const;
    bool has_column(std::string_view table, std::string_view column) const;
};

LinkedSchema linked_schema(const SchemaMarkup& markup);

/// Canonical textual form: each placeholder of `mask_text` replaced by its
/// "(span, target)" tuple, plus a trailing extras line when extras exist.
/// parse_csm of the result reproduces links and extras.
std::string render_csm_text(const std::string& mask_text, std::span<const AnnotatedSpan> links,
                            std::span<const std::string> extras);

} // namespace textsql::repr
