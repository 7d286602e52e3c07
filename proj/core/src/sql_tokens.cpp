#include <textsql/sql_tokens.hpp>
#include <textsql/strutil.hpp>

#include <cctype>
#include <unordered_set>

namespace textsql::sqlkit {

bool is_sql_keyword(const std::string& upper) {
    static const std::unordered_set<std::string> kw = {
        "SELECT", "FROM", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "LIMIT", "OFFSET",
        "JOIN", "INNER", "LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "NATURAL", "ON", "USING",
        "AS", "AND", "OR", "NOT", "IN", "EXISTS", "LIKE", "GLOB", "BETWEEN", "IS", "NULL",
        "CASE", "WHEN", "THEN", "ELSE", "END", "UNION", "ALL", "INTERSECT", "EXCEPT",
        "DISTINCT", "ASC", "DESC", "WITH", "RECURSIVE", "CAST", "COLLATE", "ESCAPE",
        "INSERT", "INTO", "VALUES", "UPDATE", "SET", "DELETE", "CREATE", "TABLE", "DROP",
        "ALTER", "INDEX", "VIEW", "TRIGGER", "PRAGMA", "ATTACH", "DETACH", "VACUUM",
        "REPLACE", "REINDEX", "ANALYZE", "EXPLAIN", "BEGIN", "COMMIT", "ROLLBACK",
        "TRUE", "FALSE", "CURRENT_DATE", "CURRENT_TIME", "CURRENT_TIMESTAMP",
    };
    return kw.count(upper) > 0;
}

namespace {

bool ident_start(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}

bool ident_char(char c) {
    return ident_start(c) || (c >= '0' && c <= '9');
}

std::string upper(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    return out;
}

} // namespace

std::vector<Token> tokenize_sql(const std::string& sql) {
    std::vector<Token> tokens;
    int depth = 0;
    size_t i = 0;
    const size_t n = sql.size();

    while (i < n) {
        const char c = sql[i];
        if (str::is_space(c)) {
            ++i;
            continue;
        }
        // comments
        if (c == '-' && i + 1 < n && sql[i + 1] == '-') {
            while (i < n && sql[i] != '\n') ++i;
            continue;
        }
        if (c == '/' && i + 1 < n && sql[i + 1] == '*') {
            const size_t end = sql.find("*/", i + 2);
            if (end == std::string::npos) throw AnalysisError("unterminated block comment");
            i = end + 2;
            continue;
        }
        // string literal
        if (c == '\'') {
            std::string text;
            size_t j = i + 1;
            while (true) {
                if (j >= n) throw AnalysisError("unterminated string literal at offset " + std::to_string(i));
                if (sql[j] == '\'') {
                    if (j + 1 < n && sql[j + 1] == '\'') { // escaped quote
                        text.push_back('\'');
                        j += 2;
                        continue;
                    }
                    break;
                }
                text.push_back(sql[j]);
                ++j;
            }
            tokens.push_back({TokenKind::string_lit, std::move(text), i, depth});
            i = j + 1;
            continue;
        }
        // quoted identifiers: "x", `x`, [x]
        if (c == '"' || c == '`' || c == '[') {
            const char close = c == '[' ? ']' : c;
            std::string text;
            size_t j = i + 1;
            while (true) {
                if (j >= n)
                    throw AnalysisError("unterminated quoted identifier at offset " + std::to_string(i));
                if (sql[j] == close) {
                    if (close != ']' && j + 1 < n && sql[j + 1] == close) {
                        text.push_back(close);
                        j += 2;
                        continue;
                    }
                    break;
                }
                text.push_back(sql[j]);
                ++j;
            }
            Token t{TokenKind::identifier, std::move(text), i, depth};
            t.quoted = true;
            tokens.push_back(std::move(t));
            i = j + 1;
            continue;
        }
        // number
        if ((c >= '0' && c <= '9') ||
            (c == '.' && i + 1 < n && sql[i + 1] >= '0' && sql[i + 1] <= '9')) {
            size_t j = i;
            bool seen_dot = false, seen_exp = false;
            while (j < n) {
                const char d = sql[j];
                if (d >= '0' && d <= '9') { ++j; continue; }
                if (d == '.' && !seen_dot && !seen_exp) { seen_dot = true; ++j; continue; }
                if ((d == 'e' || d == 'E') && !seen_exp && j + 1 < n &&
                    (isdigit(static_cast<unsigned char>(sql[j + 1])) || sql[j + 1] == '+' || sql[j + 1] == '-')) {
                    seen_exp = true;
                    j += 2;
                    continue;
                }
                break;
            }
            tokens.push_back({TokenKind::number_lit, sql.substr(i, j - i), i, depth});
            i = j;
            continue;
        }
        // bare identifier or keyword
        if (ident_start(c)) {
            size_t j = i + 1;
            while (j < n && ident_char(sql[j])) ++j;
            std::string word = sql.substr(i, j - i);
            const std::string up = upper(word);
            if (is_sql_keyword(up))
                tokens.push_back({TokenKind::keyword, up, i, depth});
            else
                tokens.push_back({TokenKind::identifier, std::move(word), i, depth});
            i = j;
            continue;
        }
        // operators / punctuation
        if (c == '(') {
            tokens.push_back({TokenKind::punct, "(", i, depth});
            ++depth;
            ++i;
            continue;
        }
        if (c == ')') {
            depth = depth > 0 ? depth - 1 : 0;
            tokens.push_back({TokenKind::punct, ")", i, depth});
            ++i;
            continue;
        }
        static const char* two_char_ops[] = {"<=", ">=", "<>", "!=", "||"};
        bool matched = false;
        for (const char* op : two_char_ops) {
            if (c == op[0] && i + 1 < n && sql[i + 1] == op[1]) {
                tokens.push_back({TokenKind::punct, op, i, depth});
                i += 2;
                matched = true;
                break;
            }
        }
        if (matched) continue;
        tokens.push_back({TokenKind::punct, std::string(1, c), i, depth});
        ++i;
    }
    return tokens;
}

} // namespace textsql::sqlkit
