#pragma once

#include <textsql/corpus.hpp>
#include <textsql/repr.hpp>
#include <textsql/sql_tokens.hpp>
#include <textsql/sqlite_db.hpp>
#include <textsql/value.hpp>

#include <chrono>
#include <string>
#include <vector>

namespace textsql::sqlkit {

/// Schema elements referenced by one SQL statement, resolved against a
/// DatabaseSchema. Unresolvable references land in diagnostics instead of
/// being dropped.
struct UsedSchema {
    std::vector<std::string> tables;                            // canonical, first-use order
    std::vector<std::pair<std::string, std::string>> columns;   // (table, column), first-use order
    std::vector<Value> literals;                                // order of appearance
    std::vector<std::string> diagnostics;

    bool has_table(std::string_view name) const;
    bool has_column(std::string_view table, std::string_view column) const;
    bool empty() const { return tables.empty() && columns.empty(); }
};

/// Tables from FROM/JOIN, columns resolved through aliases, string/number
/// literals. A tokenizer plus alias resolver, not a full grammar: good for
/// benchmark-style SQLite; constructs it cannot resolve degrade to listing
/// the table's columns rather than dropping anything.
UsedSchema extract_schema_elements(const std::string& sql, const corpus::DatabaseSchema& schema);

struct ExecutionResult {
    enum class Outcome { rows, error };
    Outcome outcome = Outcome::error;
    std::vector<Row> result_rows;   // multiset of tuples
    std::string error_message;
    std::string error_class;        // "Timeout", "WriteRejected", or SQLite code name
    std::chrono::duration<double, std::milli> elapsed{0};

    bool ok() const { return outcome == Outcome::rows; }
};

/// Execute one read-only statement with a wall-clock timeout. Write
/// statements are rejected before execution; all failures are captured in the
/// result, never thrown.
ExecutionResult execute_sql(const db::Connection& conn, const std::string& sql,
                            std::chrono::milliseconds timeout);

/// Multiset equality of row tuples; sequence equality when order_sensitive.
bool compare_results(const ExecutionResult& pred, const ExecutionResult& gold, bool order_sensitive);

/// True when the statement's top level (paren depth 0) contains ORDER BY.
bool order_sensitive_gold(const std::string& gold_sql);

struct TimingStats {
    std::vector<double> runs_ms;
    double median_ms = 0;
};

/// Median of `repeats` timed runs on a warm connection. The statement must
/// execute successfully once before timing; throws Error otherwise. Timing is
/// serialized per database file to reduce noise.
TimingStats time_sql(const db::Connection& conn, const std::string& sql, int repeats,
                     std::chrono::milliseconds timeout = std::chrono::milliseconds(60000));

/// Interleaved paired timing for runtime-ratio comparisons: the two
/// statements alternate within one serialized session so load drift hits both
/// medians equally.
std::pair<TimingStats, TimingStats> time_sql_pair(
    const db::Connection& conn, const std::string& sql_a, const std::string& sql_b, int repeats,
    std::chrono::milliseconds timeout = std::chrono::milliseconds(60000));

/// Deterministic masking oracle: every maximal question span that
/// case-insensitively equals a table name, column name or SQL literal of the
/// gold SQL becomes its placeholder. Non-overlapping, left to right, longest
/// match first; exact names only, on word boundaries.
repr::MaskedQuestion oracle_mask(const std::string& question, const std::string& gold_sql,
                                 const corpus::DatabaseSchema& schema);

} // namespace textsql::sqlkit
