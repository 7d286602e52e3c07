#include <textsql/corpus.hpp>
#include <textsql/strutil.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

using nlohmann::json;

namespace textsql::corpus {

const Column* Table::find_column(std::string_view name) const {
    for (const auto& c : columns)
        if (str::iequals(c.name, name)) return &c;
    return nullptr;
}

const Table* DatabaseSchema::find_table(std::string_view name) const {
    for (const auto& t : tables)
        if (str::iequals(t.name, name)) return &t;
    return nullptr;
}

void DatabaseSchema::check_invariants() const {
    std::set<std::string> seen;
    for (const auto& t : tables) {
        if (!seen.insert(str::lower(t.name)).second)
            throw ConfigError("duplicate table name: " + t.name);
        if (t.columns.empty()) throw ConfigError("table without columns: " + t.name);
        std::set<std::string> cols;
        for (const auto& c : t.columns)
            if (!cols.insert(str::lower(c.name)).second)
                throw ConfigError("duplicate column " + t.name + "." + c.name);
        for (const auto& pk : t.primary_key)
            if (!t.find_column(pk)) throw ConfigError("primary key column missing: " + t.name + "." + pk);
    }
    for (const auto& fk : foreign_keys) {
        const Table* from = find_table(fk.from_table);
        const Table* to = find_table(fk.to_table);
        if (!from || !from->find_column(fk.from_column) || !to || !to->find_column(fk.to_column))
            throw ConfigError("foreign key endpoint does not resolve: " + fk.from_table + "." +
                              fk.from_column + " -> " + fk.to_table + "." + fk.to_column);
    }
}

std::string difficulty_name(Difficulty d) {
    switch (d) {
        case Difficulty::simple: return "simple";
        case Difficulty::moderate: return "moderate";
        case Difficulty::challenging: return "challenging";
    }
    return "simple";
}

std::optional<Difficulty> difficulty_from_name(std::string_view name) {
    if (str::iequals(name, "simple")) return Difficulty::simple;
    if (str::iequals(name, "moderate")) return Difficulty::moderate;
    if (str::iequals(name, "challenging")) return Difficulty::challenging;
    return std::nullopt;
}

DatasetFormat dataset_format_from_name(std::string_view name) {
    if (str::iequals(name, "spider")) return DatasetFormat::spider;
    if (str::iequals(name, "bird")) return DatasetFormat::bird;
    throw ConfigError("unknown dataset format: " + std::string(name));
}

namespace {

json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

std::string require_string(const json& item, const char* key, size_t index) {
    auto it = item.find(key);
    if (it == item.end() || !it->is_string())
        throw ParseError("dataset item " + std::to_string(index) + ": missing or non-string field '" +
                         key + "'");
    return it->get<std::string>();
}

} // namespace

std::vector<Example> load_dataset(const std::filesystem::path& path, DatasetFormat format) {
    const json doc = load_json_file(path);
    if (!doc.is_array()) throw ParseError(path.string() + ": expected a JSON array of items");

    std::vector<Example> out;
    out.reserve(doc.size());
    for (size_t i = 0; i < doc.size(); ++i) {
        const json& item = doc[i];
        if (!item.is_object())
            throw ParseError("dataset item " + std::to_string(i) + ": expected an object");
        Example ex;
        ex.db_id = require_string(item, "db_id", i);
        ex.question = require_string(item, "question", i);
        if (ex.question.empty())
            throw ParseError("dataset item " + std::to_string(i) + ": empty question");

        const char* sql_key = format == DatasetFormat::spider ? "query" : "SQL";
        if (auto it = item.find(sql_key); it != item.end() && it->is_string())
            ex.gold_sql = it->get<std::string>();

        if (format == DatasetFormat::bird) {
            if (auto it = item.find("evidence"); it != item.end() && it->is_string() &&
                                                 !it->get<std::string>().empty())
                ex.evidence = it->get<std::string>();
            if (auto it = item.find("difficulty"); it != item.end() && it->is_string()) {
                auto d = difficulty_from_name(it->get<std::string>());
                if (!d)
                    throw ParseError("dataset item " + std::to_string(i) + ": unknown difficulty '" +
                                     it->get<std::string>() + "'");
                ex.difficulty = d;
            }
            if (auto it = item.find("question_id"); it != item.end()) {
                if (it->is_number_integer()) ex.id = std::to_string(it->get<int64_t>());
                else if (it->is_string()) ex.id = it->get<std::string>();
            }
        }
        if (ex.id.empty()) ex.id = std::to_string(i);
        out.push_back(std::move(ex));
    }
    return out;
}

std::filesystem::path database_path(const std::filesystem::path& db_root, const std::string& db_id) {
    return db_root / db_id / (db_id + ".sqlite");
}

namespace {

// Distinct non-null values in row order, capped at k. DISTINCT + ORDER BY
// rowid is rejected by SQLite, so deduplication happens here.
std::vector<Value> distinct_in_order(const db::Connection& conn, const std::string& table,
                                     const std::string& column, const std::string& order_clause,
                                     size_t k) {
    std::string sql = "SELECT " + db::quote_identifier(column) + " FROM " +
                      db::quote_identifier(table) + " WHERE " + db::quote_identifier(column) +
                      " IS NOT NULL";
    if (!order_clause.empty()) sql += " ORDER BY " + order_clause;

    auto stmt = conn.prepare(sql);
    std::vector<Value> out;
    while (stmt.step()) {
        Value v = stmt.column(0);
        bool dup = false;
        for (const auto& seen : out)
            if (value_equal(seen, v)) { dup = true; break; }
        if (!dup) {
            out.push_back(std::move(v));
            if (out.size() >= k) break;
        }
    }
    return out;
}

std::string pk_order_clause(const Table& table) {
    if (table.primary_key.empty()) return "rowid";
    std::string clause;
    for (const auto& pk : table.primary_key) {
        if (!clause.empty()) clause += ", ";
        clause += db::quote_identifier(pk);
    }
    return clause;
}

} // namespace

DatabaseSchema load_schema(const std::filesystem::path& db_root, const std::string& db_id,
                           int sample_cap) {
    const auto file = database_path(db_root, db_id);
    if (!std::filesystem::exists(file)) throw IoError("database file not found: " + file.string());
    auto conn = db::Connection::open_readonly(file);

    DatabaseSchema schema;
    schema.db_id = db_id;

    {
        auto stmt = conn.prepare(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' "
            "ORDER BY rowid");
        while (stmt.step()) {
            Table t;
            t.name = std::get<std::string>(stmt.column(0));
            schema.tables.push_back(std::move(t));
        }
    }
    if (schema.tables.empty()) throw ParseError("empty schema: no user tables in " + file.string());

    for (auto& table : schema.tables) {
        std::vector<std::pair<int, std::string>> pk_cols; // (pk ordinal, name)
        auto stmt = conn.prepare("PRAGMA table_info(" + db::quote_identifier(table.name) + ")");
        while (stmt.step()) {
            auto row = stmt.row();
            Column c;
            c.name = std::get<std::string>(row[1]);
            if (std::holds_alternative<std::string>(row[2])) c.declared_type = std::get<std::string>(row[2]);
            const auto pk_ord = std::get<int64_t>(row[5]);
            if (pk_ord > 0) pk_cols.emplace_back(static_cast<int>(pk_ord), c.name);
            table.columns.push_back(std::move(c));
        }
        std::sort(pk_cols.begin(), pk_cols.end());
        for (auto& [ord, name] : pk_cols) table.primary_key.push_back(std::move(name));
    }

    for (auto& table : schema.tables) {
        auto stmt = conn.prepare("PRAGMA foreign_key_list(" + db::quote_identifier(table.name) + ")");
        while (stmt.step()) {
            auto row = stmt.row();
            ForeignKey fk;
            fk.from_table = table.name;
            fk.to_table = std::get<std::string>(row[2]);
            fk.from_column = std::get<std::string>(row[3]);
            if (std::holds_alternative<std::string>(row[4])) {
                fk.to_column = std::get<std::string>(row[4]);
            } else if (const Table* target = schema.find_table(fk.to_table)) {
                // Implicit reference to the target's primary key.
                const auto seq = static_cast<size_t>(std::get<int64_t>(row[1]));
                if (seq < target->primary_key.size()) fk.to_column = target->primary_key[seq];
            }
            if (!fk.to_column.empty() && schema.find_table(fk.to_table))
                schema.foreign_keys.push_back(std::move(fk));
        }
    }

    if (sample_cap > 0) {
        for (auto& table : schema.tables) {
            const std::string order = pk_order_clause(table);
            for (auto& col : table.columns) {
                try {
                    col.sample_values =
                        distinct_in_order(conn, table.name, col.name, order, static_cast<size_t>(sample_cap));
                } catch (const db::SqliteError&) {
                    // WITHOUT ROWID tables reject the rowid fallback; retry unordered.
                    col.sample_values =
                        distinct_in_order(conn, table.name, col.name, "", static_cast<size_t>(sample_cap));
                }
            }
        }
    }

    schema.check_invariants();
    return schema;
}

std::vector<Value> sample_column_values(const DatabaseSchema& schema, const db::Connection& conn,
                                        const std::string& table, const std::string& column, int k) {
    if (k < 1) throw ConfigError("sample_column_values: k must be >= 1");
    const Table* t = schema.find_table(table);
    if (!t) throw ConfigError("unknown table: " + table);
    const Column* c = t->find_column(column);
    if (!c) throw ConfigError("unknown column: " + table + "." + column);
    try {
        return distinct_in_order(conn, t->name, c->name, pk_order_clause(*t), static_cast<size_t>(k));
    } catch (const db::SqliteError&) {
        return distinct_in_order(conn, t->name, c->name, "", static_cast<size_t>(k));
    }
}

std::vector<ValueMatch> match_question_values(const std::string& question,
                                              const DatabaseSchema& schema,
                                              const db::Connection& conn, size_t limit,
                                              size_t min_len) {
    if (limit == 0) return {};
    const std::string folded = str::lower(question);

    std::vector<ValueMatch> matches;
    for (const auto& table : schema.tables) {
        for (const auto& col : table.columns) {
            std::string sql = "SELECT DISTINCT " + db::quote_identifier(col.name) + " FROM " +
                              db::quote_identifier(table.name) + " WHERE " +
                              db::quote_identifier(col.name) + " IS NOT NULL";
            auto stmt = conn.prepare(sql);
            while (stmt.step()) {
                Value v = stmt.column(0);
                if (!std::holds_alternative<std::string>(v)) continue; // string cells only
                const std::string& cell = std::get<std::string>(v);
                const std::string needle = str::lower(str::trim(cell));
                if (needle.size() < min_len) continue;
                if (folded.find(needle) == std::string::npos) continue;
                matches.push_back(ValueMatch{table.name, col.name, cell});
            }
        }
    }
    // Longest match first; schema order breaks ties deterministically because
    // the scan above visits tables/columns in declaration order.
    std::stable_sort(matches.begin(), matches.end(), [](const ValueMatch& a, const ValueMatch& b) {
        return a.value.size() > b.value.size();
    });
    if (matches.size() > limit) matches.resize(limit);
    return matches;
}

std::vector<std::string> cross_check_tables_json(const DatabaseSchema& schema,
                                                 const nlohmann::json& entry) {
    std::vector<std::string> warnings;
    if (!entry.is_object() || !entry.contains("table_names_original")) {
        warnings.push_back("tables.json entry for " + schema.db_id + " is missing table_names_original");
        return warnings;
    }
    std::set<std::string> declared;
    for (const auto& t : entry["table_names_original"])
        if (t.is_string()) declared.insert(str::lower(t.get<std::string>()));

    std::set<std::string> introspected;
    for (const auto& t : schema.tables) introspected.insert(str::lower(t.name));

    for (const auto& name : declared)
        if (!introspected.count(name))
            warnings.push_back(schema.db_id + ": tables.json lists table '" + name +
                               "' absent from the database");
    for (const auto& name : introspected)
        if (!declared.count(name))
            warnings.push_back(schema.db_id + ": database table '" + name + "' absent from tables.json");

    if (entry.contains("column_names_original") && entry.contains("table_names_original")) {
        const auto& tables_json = entry["table_names_original"];
        std::set<std::pair<std::string, std::string>> declared_cols;
        for (const auto& col : entry["column_names_original"]) {
            if (!col.is_array() || col.size() != 2) continue;
            const int ti = col[0].get<int>();
            if (ti < 0 || ti >= static_cast<int>(tables_json.size())) continue;
            declared_cols.emplace(str::lower(tables_json[ti].get<std::string>()),
                                  str::lower(col[1].get<std::string>()));
        }
        for (const auto& t : schema.tables)
            for (const auto& c : t.columns)
                if (declared.count(str::lower(t.name)) &&
                    !declared_cols.count({str::lower(t.name), str::lower(c.name)}))
                    warnings.push_back(schema.db_id + ": column '" + t.name + "." + c.name +
                                       "' absent from tables.json");
    }
    return warnings;
}

} // namespace textsql::corpus
