#pragma once

#include <textsql/errors.hpp>
#include <textsql/value.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <string>

struct sqlite3;
struct sqlite3_stmt;

namespace textsql::db {

class SqliteError : public Error {
public:
    SqliteError(const std::string& what, int code) : Error(what), code(code) {}
    int code;
};

class Statement;

/// RAII wrapper around one sqlite3 connection. Connections are not shared
/// between threads; each worker opens its own.
class Connection {
public:
    static Connection open_readonly(const std::filesystem::path& file);
    /// Read-write open, creating the file if needed (fixtures and tests).
    static Connection open_readwrite(const std::filesystem::path& file);
    /// Private in-memory database.
    static Connection open_memory();

    Connection() = default;
    Connection(Connection&&) noexcept;
    Connection& operator=(Connection&&) noexcept;
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;
    ~Connection();

    bool is_open() const { return handle_ != nullptr; }
    sqlite3* raw() const { return handle_; }
    const std::filesystem::path& file() const { return file_; }

    Statement prepare(const std::string& sql) const;
    /// Run one or more statements, discarding rows (schema setup, pragmas).
    void exec(const std::string& sql) const;
    /// Abort the running statement after roughly `deadline_ms` of wall time.
    /// Passing 0 clears the handler.
    void set_deadline_ms(int64_t deadline_ms) const;
    bool deadline_hit() const;

private:
    Connection(sqlite3* h, std::filesystem::path file);

    sqlite3* handle_ = nullptr;
    std::filesystem::path file_;
    struct Deadline;
    std::shared_ptr<Deadline> deadline_;
};

/// Prepared statement with stepwise row access.
class Statement {
public:
    Statement(sqlite3_stmt* stmt, const char* tail);
    Statement(Statement&&) noexcept;
    Statement& operator=(Statement&&) noexcept;
    Statement(const Statement&) = delete;
    Statement& operator=(const Statement&) = delete;
    ~Statement();

    /// True when a row is available, false at end. Throws SqliteError on failure.
    bool step();
    int column_count() const;
    Value column(int i) const;
    Row row() const;
    /// Non-whitespace text following the first statement, if any.
    const std::string& tail() const { return tail_; }

private:
    sqlite3_stmt* stmt_ = nullptr;
    std::string tail_;
};

/// Quote an identifier for embedding into SQL text ("name" with "" escaping).
std::string quote_identifier(std::string_view name);

} // namespace textsql::db
