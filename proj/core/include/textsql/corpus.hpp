#pragma once

#include <textsql/errors.hpp>
#include <textsql/sqlite_db.hpp>
#include <textsql/value.hpp>

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace textsql::corpus {

struct Column {
    std::string name;
    std::string declared_type;
    std::vector<Value> sample_values; // up to the configured cap, possibly empty
};

struct Table {
    std::string name;
    std::vector<Column> columns;
    std::vector<std::string> primary_key;

    const Column* find_column(std::string_view name) const; // case-insensitive
};

struct ForeignKey {
    std::string from_table;
    std::string from_column;
    std::string to_table;
    std::string to_column;
};

struct DatabaseSchema {
    std::string db_id;
    std::vector<Table> tables;          // database declaration order
    std::vector<ForeignKey> foreign_keys;

    const Table* find_table(std::string_view name) const; // case-insensitive
    /// Throws ConfigError when a structural invariant is broken (duplicate
    /// table names, dangling foreign-key endpoint, table without columns).
    void check_invariants() const;
};

enum class Difficulty { simple, moderate, challenging };

std::string difficulty_name(Difficulty d);
std::optional<Difficulty> difficulty_from_name(std::string_view name);

struct Example {
    std::string id;
    std::string db_id;
    std::string question;
    std::optional<std::string> gold_sql; // absent for inference-only sets
    std::optional<std::string> evidence;
    std::optional<Difficulty> difficulty;
};

enum class DatasetFormat { spider, bird };

DatasetFormat dataset_format_from_name(std::string_view name);

/// Load a Spider- or BIRD-style dev/train JSON array. Order is preserved;
/// malformed items raise ParseError naming the item index.
std::vector<Example> load_dataset(const std::filesystem::path& path, DatasetFormat format);

std::filesystem::path database_path(const std::filesystem::path& db_root, const std::string& db_id);

/// Introspect db_root/<db_id>/<db_id>.sqlite into a schema. Tables, columns,
/// primary keys and foreign keys come from database metadata in declaration
/// order; each column carries up to `sample_cap` distinct non-null values.
DatabaseSchema load_schema(const std::filesystem::path& db_root, const std::string& db_id,
                           int sample_cap = 3);

/// Up to k distinct non-null values of table.column, first-k in primary-key
/// (rowid) order.
std::vector<Value> sample_column_values(const DatabaseSchema& schema, const db::Connection& conn,
                                        const std::string& table, const std::string& column, int k);

struct ValueMatch {
    std::string table;
    std::string column;
    std::string value; // cell text, verbatim
};

/// Cell values whose case-folded text occurs as a substring of the case-folded
/// question. String cells only, minimum match length `min_len`, ranked by
/// match length descending, capped at `limit`.
std::vector<ValueMatch> match_question_values(const std::string& question,
                                              const DatabaseSchema& schema,
                                              const db::Connection& conn, size_t limit,
                                              size_t min_len = 3);

/// Compare an introspected schema against its tables.json entry; returns one
/// warning line per mismatch (introspection stays authoritative).
std::vector<std::string> cross_check_tables_json(const DatabaseSchema& schema,
                                                 const nlohmann::json& tables_entry);

} // namespace textsql::corpus
