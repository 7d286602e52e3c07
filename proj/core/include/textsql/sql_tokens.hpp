#pragma once

#include <textsql/errors.hpp>

#include <string>
#include <vector>

namespace textsql::sqlkit {

class AnalysisError : public Error {
public:
    using Error::Error;
};

enum class TokenKind {
    keyword,    // SQL keyword, text upper-cased
    identifier, // bare or quoted identifier, quotes stripped
    string_lit, // 'text', quotes stripped, '' unescaped
    number_lit,
    punct, // single operator/punctuation character or multi-char operator
};

struct Token {
    TokenKind kind;
    std::string text;
    size_t pos;   // byte offset in the input
    int depth;    // parenthesis nesting depth at the token
    bool quoted = false; // identifier was quoted ("x", `x`, [x])
};

/// Tokenize one SQL statement: identifiers (bare, "double-quoted",
/// `backquoted`, [bracketed]), string and number literals, keywords,
/// operators. Comments (-- and /* */) are dropped. Throws AnalysisError on
/// unterminated strings or quotes.
std::vector<Token> tokenize_sql(const std::string& sql);

bool is_sql_keyword(const std::string& upper);

} // namespace textsql::sqlkit
