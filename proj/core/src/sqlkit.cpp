#include <textsql/sqlkit.hpp>
#include <textsql/strutil.hpp>

#include <sqlite3.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <set>
#include <unordered_map>

namespace textsql::sqlkit {

bool UsedSchema::has_table(std::string_view name) const {
    for (const auto& t : tables)
        if (str::iequals(t, name)) return true;
    return false;
}

bool UsedSchema::has_column(std::string_view table, std::string_view column) const {
    for (const auto& [t, c] : columns)
        if (str::iequals(t, table) && str::iequals(c, column)) return true;
    return false;
}

namespace {

struct Extractor {
    const std::vector<Token>& toks;
    const corpus::DatabaseSchema& schema;
    UsedSchema out;

    // lower(alias or table name) -> canonical table; empty string marks a
    // derived table or CTE alias.
    std::unordered_map<std::string, std::string> bindings;
    std::set<std::string> cte_names;      // lower
    std::set<std::string> select_aliases; // lower
    std::set<size_t> consumed;            // token indices used as table refs/aliases
    std::set<std::string> seen_tables;    // lower, dedupe
    std::set<std::pair<std::string, std::string>> seen_columns;

    bool is_kw(size_t i, const char* text) const {
        return i < toks.size() && toks[i].kind == TokenKind::keyword && toks[i].text == text;
    }
    bool is_punct(size_t i, const char* text) const {
        return i < toks.size() && toks[i].kind == TokenKind::punct && toks[i].text == text;
    }
    bool is_ident(size_t i) const {
        return i < toks.size() && toks[i].kind == TokenKind::identifier;
    }

    size_t matching_close(size_t open) const {
        const int d = toks[open].depth;
        for (size_t j = open + 1; j < toks.size(); ++j)
            if (toks[j].kind == TokenKind::punct && toks[j].text == ")" && toks[j].depth == d)
                return j;
        return toks.size();
    }

    void add_table(const std::string& canonical) {
        if (seen_tables.insert(str::lower(canonical)).second) out.tables.push_back(canonical);
    }

    void add_column(const std::string& table, const std::string& column) {
        if (seen_columns.emplace(str::lower(table), str::lower(column)).second)
            out.columns.emplace_back(table, column);
    }

    void add_all_columns(const std::string& table) {
        if (const corpus::Table* t = schema.find_table(table))
            for (const auto& c : t->columns) add_column(t->name, c.name);
    }

    void scan_ctes() {
        for (size_t i = 0; i < toks.size(); ++i) {
            if (!is_kw(i, "WITH")) continue;
            size_t j = i + 1;
            if (is_kw(j, "RECURSIVE")) ++j;
            while (is_ident(j)) {
                const std::string name = str::lower(toks[j].text);
                size_t k = j + 1;
                if (is_punct(k, "(")) k = matching_close(k) + 1; // column list
                if (!is_kw(k, "AS") || !is_punct(k + 1, "(")) break;
                cte_names.insert(name);
                k = matching_close(k + 1) + 1;
                if (!is_punct(k, ",")) break;
                j = k + 1;
            }
        }
    }

    // Parse one table reference starting at j; returns the index just past the
    // reference (including any alias).
    size_t parse_table_ref(size_t j) {
        if (is_punct(j, "(")) {
            // derived table: (SELECT ...) [AS] alias — inner FROMs are scanned
            // by the main loop; the alias binds to no schema table
            size_t after = matching_close(j) + 1;
            if (is_kw(after, "AS")) ++after;
            if (is_ident(after)) {
                bindings[str::lower(toks[after].text)] = "";
                consumed.insert(after);
                ++after;
            }
            return after;
        }
        if (!is_ident(j)) return j;

        size_t name_idx = j;
        if (is_punct(j + 1, ".") && is_ident(j + 2)) name_idx = j + 2; // db-qualified
        const std::string raw = toks[name_idx].text;
        const std::string low = str::lower(raw);
        consumed.insert(j);
        consumed.insert(name_idx);

        if (cte_names.count(low)) {
            bindings[low] = "";
        } else if (const corpus::Table* t = schema.find_table(raw)) {
            add_table(t->name);
            bindings[low] = t->name;
        } else {
            out.diagnostics.push_back("unknown table '" + raw + "'");
            bindings[low] = "";
        }

        size_t k = name_idx + 1;
        if (is_kw(k, "AS") && is_ident(k + 1)) {
            bindings[str::lower(toks[k + 1].text)] = bindings[low];
            consumed.insert(k + 1);
            k += 2;
        } else if (is_ident(k) && !is_punct(k + 1, "(")) {
            bindings[str::lower(toks[k].text)] = bindings[low];
            consumed.insert(k);
            k += 1;
        }
        return k;
    }

    void scan_bindings() {
        for (size_t i = 0; i < toks.size(); ++i) {
            if (is_kw(i, "FROM")) {
                size_t j = parse_table_ref(i + 1);
                // comma-separated FROM list
                while (is_punct(j, ",") && toks[j].depth == toks[i].depth)
                    j = parse_table_ref(j + 1);
            } else if (is_kw(i, "JOIN")) {
                parse_table_ref(i + 1);
            } else if (is_kw(i, "AS") && is_ident(i + 1) && !consumed.count(i + 1) &&
                       !is_punct(i + 2, "(")) {
                // output-column alias (SELECT expr AS n); remember so later
                // references to it are not flagged
                select_aliases.insert(str::lower(toks[i + 1].text));
            }
        }
    }

    void resolve_qualified(size_t i) {
        const std::string qual = str::lower(toks[i].text);
        const size_t col_idx = i + 2;
        auto it = bindings.find(qual);
        std::string table;
        if (it != bindings.end()) {
            table = it->second;
        } else if (const corpus::Table* t = schema.find_table(toks[i].text)) {
            table = t->name; // qualified by table name not present in FROM
        } else {
            out.diagnostics.push_back("unresolved qualifier '" + toks[i].text + "'");
            return;
        }
        if (table.empty()) return; // derived table or CTE; inner scan covered it

        if (is_punct(col_idx, "*")) {
            add_all_columns(table);
            return;
        }
        const std::string& col = toks[col_idx].text;
        const corpus::Table* t = schema.find_table(table);
        if (t && t->find_column(col)) {
            add_column(t->name, t->find_column(col)->name);
        } else {
            out.diagnostics.push_back("unknown column '" + toks[i].text + "." + col + "'");
        }
    }

    void resolve_bare(size_t i) {
        const std::string low = str::lower(toks[i].text);
        if (select_aliases.count(low) || bindings.count(low) || cte_names.count(low)) return;
        bool found = false;
        for (const auto& tname : out.tables) {
            const corpus::Table* t = schema.find_table(tname);
            if (const corpus::Column* c = t ? t->find_column(toks[i].text) : nullptr) {
                add_column(t->name, c->name);
                found = true;
            }
        }
        if (!found) out.diagnostics.push_back("unresolved identifier '" + toks[i].text + "'");
    }

    void scan_columns_and_literals() {
        for (size_t i = 0; i < toks.size(); ++i) {
            const Token& tok = toks[i];
            switch (tok.kind) {
                case TokenKind::string_lit:
                    out.literals.emplace_back(tok.text);
                    break;
                case TokenKind::number_lit: {
                    try {
                        if (tok.text.find_first_of(".eE") == std::string::npos)
                            out.literals.emplace_back(static_cast<int64_t>(std::stoll(tok.text)));
                        else
                            out.literals.emplace_back(std::stod(tok.text));
                    } catch (const std::exception&) {
                        out.literals.emplace_back(tok.text); // out-of-range: keep the digits as text
                    }
                    break;
                }
                case TokenKind::identifier: {
                    if (consumed.count(i)) break;
                    if (is_punct(i + 1, "(")) break; // function call
                    if (i > 0 && is_punct(i - 1, ".")) break; // handled at the qualifier
                    if (is_punct(i + 1, ".") && (is_ident(i + 2) || is_punct(i + 2, "*"))) {
                        resolve_qualified(i);
                        i += 2;
                    } else {
                        resolve_bare(i);
                    }
                    break;
                }
                case TokenKind::punct:
                    if (tok.text == "*" && (i == 0 || !is_punct(i - 1, "."))) {
                        // bare star: treat as all columns of every referenced table,
                        // unless it is COUNT(*)'s argument (function already skipped
                        // the name; the star itself still means "a row", not columns)
                        if (i > 0 && is_punct(i - 1, "(") && i >= 2 &&
                            toks[i - 2].kind == TokenKind::identifier)
                            break; // aggregate argument, e.g. count(*)
                        for (const auto& t : out.tables) add_all_columns(t);
                    }
                    break;
                default:
                    break;
            }
        }
    }
};

} // namespace

UsedSchema extract_schema_elements(const std::string& sql, const corpus::DatabaseSchema& schema) {
    if (str::trim(sql).empty()) throw AnalysisError("empty SQL");
    const auto tokens = tokenize_sql(sql);
    Extractor ex{tokens, schema};
    ex.scan_ctes();
    ex.scan_bindings();
    ex.scan_columns_and_literals();
    return std::move(ex.out);
}

namespace {

std::string sqlite_code_name(int code) {
    switch (code & 0xff) {
        case SQLITE_ERROR: return "SQLITE_ERROR";
        case SQLITE_INTERNAL: return "SQLITE_INTERNAL";
        case SQLITE_PERM: return "SQLITE_PERM";
        case SQLITE_ABORT: return "SQLITE_ABORT";
        case SQLITE_BUSY: return "SQLITE_BUSY";
        case SQLITE_LOCKED: return "SQLITE_LOCKED";
        case SQLITE_NOMEM: return "SQLITE_NOMEM";
        case SQLITE_READONLY: return "SQLITE_READONLY";
        case SQLITE_INTERRUPT: return "SQLITE_INTERRUPT";
        case SQLITE_IOERR: return "SQLITE_IOERR";
        case SQLITE_CORRUPT: return "SQLITE_CORRUPT";
        case SQLITE_FULL: return "SQLITE_FULL";
        case SQLITE_CANTOPEN: return "SQLITE_CANTOPEN";
        case SQLITE_SCHEMA: return "SQLITE_SCHEMA";
        case SQLITE_TOOBIG: return "SQLITE_TOOBIG";
        case SQLITE_CONSTRAINT: return "SQLITE_CONSTRAINT";
        case SQLITE_MISMATCH: return "SQLITE_MISMATCH";
        case SQLITE_MISUSE: return "SQLITE_MISUSE";
        case SQLITE_AUTH: return "SQLITE_AUTH";
        case SQLITE_RANGE: return "SQLITE_RANGE";
        case SQLITE_NOTADB: return "SQLITE_NOTADB";
        default: return "SQLITE_" + std::to_string(code);
    }
}

// First meaningful keyword decides whether the statement is a read.
bool is_read_statement(const std::string& sql, std::string* first_kw) {
    try {
        for (const auto& tok : tokenize_sql(sql)) {
            if (tok.kind == TokenKind::punct && (tok.text == "(" || tok.text == ";")) continue;
            if (tok.kind == TokenKind::keyword) {
                *first_kw = tok.text;
                return tok.text == "SELECT" || tok.text == "WITH" || tok.text == "VALUES";
            }
            *first_kw = tok.text;
            return false;
        }
    } catch (const AnalysisError&) {
        // let sqlite produce the real syntax error
        return true;
    }
    *first_kw = "";
    return false;
}

} // namespace

ExecutionResult execute_sql(const db::Connection& conn, const std::string& sql,
                            std::chrono::milliseconds timeout) {
    ExecutionResult result;
    const auto started = std::chrono::steady_clock::now();
    auto finish = [&]() {
        result.elapsed = std::chrono::steady_clock::now() - started;
    };

    std::string first_kw;
    if (!is_read_statement(sql, &first_kw)) {
        result.error_class = "WriteRejected";
        result.error_message = "statement rejected: only read queries are allowed (got '" +
                               first_kw + "')";
        finish();
        return result;
    }

    conn.set_deadline_ms(timeout.count());
    try {
        auto stmt = conn.prepare(sql);
        if (!stmt.tail().empty()) {
            conn.set_deadline_ms(0);
            result.error_class = "MultipleStatements";
            result.error_message = "statement rejected: trailing content after first statement";
            finish();
            return result;
        }
        while (stmt.step()) result.result_rows.push_back(stmt.row());
        result.outcome = ExecutionResult::Outcome::rows;
    } catch (const db::SqliteError& e) {
        result.outcome = ExecutionResult::Outcome::error;
        result.result_rows.clear();
        if (conn.deadline_hit()) {
            result.error_class = "Timeout";
            result.error_message = "query exceeded the " + std::to_string(timeout.count()) +
                                   " ms time budget";
        } else {
            result.error_class = sqlite_code_name(e.code);
            result.error_message = e.what();
        }
    }
    conn.set_deadline_ms(0);
    finish();
    return result;
}

bool compare_results(const ExecutionResult& pred, const ExecutionResult& gold,
                     bool order_sensitive) {
    if (!pred.ok() || !gold.ok()) return false;
    if (pred.result_rows.size() != gold.result_rows.size()) return false;
    if (order_sensitive) {
        for (size_t i = 0; i < pred.result_rows.size(); ++i)
            if (!row_equal(pred.result_rows[i], gold.result_rows[i])) return false;
        return true;
    }
    auto a = pred.result_rows;
    auto b = gold.result_rows;
    std::sort(a.begin(), a.end(), row_less);
    std::sort(b.begin(), b.end(), row_less);
    for (size_t i = 0; i < a.size(); ++i)
        if (!row_equal(a[i], b[i])) return false;
    return true;
}

bool order_sensitive_gold(const std::string& gold_sql) {
    try {
        const auto toks = tokenize_sql(gold_sql);
        for (size_t i = 0; i + 1 < toks.size(); ++i)
            if (toks[i].kind == TokenKind::keyword && toks[i].text == "ORDER" &&
                toks[i].depth == 0 && toks[i + 1].kind == TokenKind::keyword &&
                toks[i + 1].text == "BY")
                return true;
        return false;
    } catch (const AnalysisError&) {
        return str::ifind(gold_sql, "order by") != std::string::npos;
    }
}

namespace {

// One timing session per database at a time.
std::mutex* timing_mutex_for(const db::Connection& conn) {
    static std::mutex registry_mutex;
    static std::map<std::string, std::mutex> db_mutexes;
    std::lock_guard lock(registry_mutex);
    return &db_mutexes[conn.file().string()];
}

double timed_run_ms(const db::Connection& conn, const std::string& sql,
                    std::chrono::milliseconds timeout) {
    auto r = execute_sql(conn, sql, timeout);
    if (!r.ok()) throw Error("time_sql: statement failed during timing: " + r.error_message);
    return r.elapsed.count();
}

double median_of(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

} // namespace

TimingStats time_sql(const db::Connection& conn, const std::string& sql, int repeats,
                     std::chrono::milliseconds timeout) {
    if (repeats < 1) throw ConfigError("time_sql: repeats must be >= 1");

    auto probe = execute_sql(conn, sql, timeout);
    if (!probe.ok())
        throw Error("time_sql: statement failed before timing: " + probe.error_message);

    std::lock_guard db_lock(*timing_mutex_for(conn));
    TimingStats stats;
    stats.runs_ms.reserve(static_cast<size_t>(repeats));
    for (int i = 0; i < repeats; ++i) stats.runs_ms.push_back(timed_run_ms(conn, sql, timeout));
    stats.median_ms = median_of(stats.runs_ms);
    return stats;
}

std::pair<TimingStats, TimingStats> time_sql_pair(const db::Connection& conn,
                                                  const std::string& sql_a,
                                                  const std::string& sql_b, int repeats,
                                                  std::chrono::milliseconds timeout) {
    if (repeats < 1) throw ConfigError("time_sql_pair: repeats must be >= 1");
    for (const auto* sql : {&sql_a, &sql_b}) {
        auto probe = execute_sql(conn, *sql, timeout);
        if (!probe.ok())
            throw Error("time_sql_pair: statement failed before timing: " + probe.error_message);
    }

    std::lock_guard db_lock(*timing_mutex_for(conn));
    TimingStats a, b;
    a.runs_ms.reserve(static_cast<size_t>(repeats));
    b.runs_ms.reserve(static_cast<size_t>(repeats));
    for (int i = 0; i < repeats; ++i) {
        a.runs_ms.push_back(timed_run_ms(conn, sql_a, timeout));
        b.runs_ms.push_back(timed_run_ms(conn, sql_b, timeout));
    }
    a.median_ms = median_of(a.runs_ms);
    b.median_ms = median_of(b.runs_ms);
    return {a, b};
}

namespace {

struct MaskCandidate {
    std::string text;
    repr::PlaceholderKind kind;
    int priority; // table 0, column 1, value 2; lower wins on equal length
};

bool boundary_ok(const std::string& q, size_t begin, size_t end) {
    const bool left_word = begin > 0 && str::is_word_char(q[begin - 1]);
    const bool right_word = end < q.size() && str::is_word_char(q[end]);
    // only require a boundary on sides where the candidate itself is wordish
    const bool cand_left_word = str::is_word_char(q[begin]);
    const bool cand_right_word = str::is_word_char(q[end - 1]);
    if (cand_left_word && left_word) return false;
    if (cand_right_word && right_word) return false;
    return true;
}

} // namespace

repr::MaskedQuestion oracle_mask(const std::string& question, const std::string& gold_sql,
                                 const corpus::DatabaseSchema& schema) {
    const UsedSchema used = extract_schema_elements(gold_sql, schema);

    std::vector<MaskCandidate> candidates;
    std::set<std::string> seen;
    auto add = [&](const std::string& text, repr::PlaceholderKind kind, int priority) {
        if (text.empty()) return;
        if (!seen.insert(str::lower(text)).second) return; // first (highest-priority) kind wins
        candidates.push_back({text, kind, priority});
    };
    for (const auto& t : used.tables) add(t, repr::PlaceholderKind::table, 0);
    for (const auto& [t, c] : used.columns) add(c, repr::PlaceholderKind::column, 1);
    for (const auto& lit : used.literals) add(value_to_text(lit), repr::PlaceholderKind::value, 2);

    std::sort(candidates.begin(), candidates.end(), [](const MaskCandidate& a, const MaskCandidate& b) {
        if (a.text.size() != b.text.size()) return a.text.size() > b.text.size();
        if (a.priority != b.priority) return a.priority < b.priority;
        return a.text < b.text;
    });

    repr::MaskedQuestion out;
    size_t i = 0;
    while (i < question.size()) {
        const MaskCandidate* hit = nullptr;
        size_t hit_end = 0;
        for (const auto& cand : candidates) {
            const size_t end = i + cand.text.size();
            if (end > question.size()) continue;
            if (!str::iequals(std::string_view(question).substr(i, cand.text.size()), cand.text))
                continue;
            if (!boundary_ok(question, i, end)) continue;
            hit = &cand;
            hit_end = end;
            break; // longest-match-first by sort order
        }
        if (hit) {
            out.alignment.push_back(
                repr::MaskEntry{question.substr(i, hit_end - i), hit->kind, i, hit_end});
            out.text += repr::placeholder_token(hit->kind);
            i = hit_end;
        } else {
            out.text.push_back(question[i]);
            ++i;
        }
    }
    return out;
}

} // namespace textsql::sqlkit
