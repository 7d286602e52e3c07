#include <textsql/sqlite_db.hpp>

#include <sqlite3.h>

#include <atomic>
#include <cctype>
#include <chrono>

namespace textsql::db {

namespace {

[[noreturn]] void throw_sqlite(sqlite3* h, const std::string& context) {
    const int code = h ? sqlite3_errcode(h) : SQLITE_ERROR;
    const char* msg = h ? sqlite3_errmsg(h) : "sqlite error";
    throw SqliteError(context + ": " + msg, code);
}

} // namespace

struct Connection::Deadline {
    std::atomic<int64_t> at_ms{0}; // steady_clock epoch ms; 0 = disabled
    std::atomic<bool> hit{false};

    static int64_t now_ms() {
        using namespace std::chrono;
        return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
    }
};

Connection::Connection(sqlite3* h, std::filesystem::path file)
    : handle_(h), file_(std::move(file)), deadline_(std::make_shared<Deadline>()) {
    // Progress handler drives statement timeouts; ~1000 VM ops per check keeps
    // overhead low while still interrupting runaway queries quickly.
    sqlite3_progress_handler(
        handle_, 1000,
        [](void* p) -> int {
            auto* d = static_cast<Deadline*>(p);
            const int64_t at = d->at_ms.load(std::memory_order_relaxed);
            if (at != 0 && Deadline::now_ms() >= at) {
                d->hit.store(true, std::memory_order_relaxed);
                return 1; // abort
            }
            return 0;
        },
        deadline_.get());
    sqlite3_busy_timeout(handle_, 2000);
}

Connection Connection::open_readonly(const std::filesystem::path& file) {
    sqlite3* h = nullptr;
    const int rc = sqlite3_open_v2(file.string().c_str(), &h, SQLITE_OPEN_READONLY, nullptr);
    if (rc != SQLITE_OK) {
        std::string msg = h ? sqlite3_errmsg(h) : "cannot open database";
        if (h) sqlite3_close(h);
        throw IoError("cannot open database " + file.string() + ": " + msg);
    }
    return Connection(h, file);
}

Connection Connection::open_readwrite(const std::filesystem::path& file) {
    sqlite3* h = nullptr;
    const int rc =
        sqlite3_open_v2(file.string().c_str(), &h, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE, nullptr);
    if (rc != SQLITE_OK) {
        std::string msg = h ? sqlite3_errmsg(h) : "cannot open database";
        if (h) sqlite3_close(h);
        throw IoError("cannot open database " + file.string() + ": " + msg);
    }
    return Connection(h, file);
}

Connection Connection::open_memory() {
    sqlite3* h = nullptr;
    if (sqlite3_open(":memory:", &h) != SQLITE_OK) {
        if (h) sqlite3_close(h);
        throw IoError("cannot open in-memory database");
    }
    return Connection(h, ":memory:");
}

Connection::Connection(Connection&& other) noexcept
    : handle_(other.handle_), file_(std::move(other.file_)), deadline_(std::move(other.deadline_)) {
    other.handle_ = nullptr;
}

Connection& Connection::operator=(Connection&& other) noexcept {
    if (this != &other) {
        if (handle_) sqlite3_close_v2(handle_);
        handle_ = other.handle_;
        file_ = std::move(other.file_);
        deadline_ = std::move(other.deadline_);
        other.handle_ = nullptr;
    }
    return *this;
}

Connection::~Connection() {
    if (handle_) sqlite3_close_v2(handle_);
}

Statement Connection::prepare(const std::string& sql) const {
    sqlite3_stmt* stmt = nullptr;
    const char* tail = nullptr;
    const int rc = sqlite3_prepare_v2(handle_, sql.c_str(), static_cast<int>(sql.size()), &stmt, &tail);
    if (rc != SQLITE_OK) throw_sqlite(handle_, "prepare failed");
    if (!stmt) throw SqliteError("empty statement", SQLITE_MISUSE);
    return Statement(stmt, tail);
}

void Connection::exec(const std::string& sql) const {
    char* err = nullptr;
    if (sqlite3_exec(handle_, sql.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : "exec failed";
        sqlite3_free(err);
        throw SqliteError(msg, sqlite3_errcode(handle_));
    }
}

void Connection::set_deadline_ms(int64_t deadline_ms) const {
    deadline_->hit.store(false, std::memory_order_relaxed);
    deadline_->at_ms.store(deadline_ms == 0 ? 0 : Connection::Deadline::now_ms() + deadline_ms,
                           std::memory_order_relaxed);
}

bool Connection::deadline_hit() const {
    return deadline_->hit.load(std::memory_order_relaxed);
}

Statement::Statement(sqlite3_stmt* stmt, const char* tail) : stmt_(stmt), tail_(tail ? tail : "") {
    // keep only meaningful trailing content
    size_t b = 0, e = tail_.size();
    while (b < e && (isspace(static_cast<unsigned char>(tail_[b])) || tail_[b] == ';')) ++b;
    while (e > b && isspace(static_cast<unsigned char>(tail_[e - 1]))) --e;
    tail_ = tail_.substr(b, e - b);
}

Statement::Statement(Statement&& other) noexcept : stmt_(other.stmt_), tail_(std::move(other.tail_)) {
    other.stmt_ = nullptr;
}

Statement& Statement::operator=(Statement&& other) noexcept {
    if (this != &other) {
        if (stmt_) sqlite3_finalize(stmt_);
        stmt_ = other.stmt_;
        tail_ = std::move(other.tail_);
        other.stmt_ = nullptr;
    }
    return *this;
}

Statement::~Statement() {
    if (stmt_) sqlite3_finalize(stmt_);
}

bool Statement::step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    sqlite3* h = sqlite3_db_handle(stmt_);
    throw SqliteError(sqlite3_errmsg(h), rc);
}

int Statement::column_count() const {
    return sqlite3_column_count(stmt_);
}

Value Statement::column(int i) const {
    switch (sqlite3_column_type(stmt_, i)) {
        case SQLITE_NULL:
            return std::monostate{};
        case SQLITE_INTEGER:
            return static_cast<int64_t>(sqlite3_column_int64(stmt_, i));
        case SQLITE_FLOAT:
            return sqlite3_column_double(stmt_, i);
        case SQLITE_TEXT: {
            const unsigned char* t = sqlite3_column_text(stmt_, i);
            const int n = sqlite3_column_bytes(stmt_, i);
            return std::string(reinterpret_cast<const char*>(t), static_cast<size_t>(n));
        }
        default: {
            const auto* data = static_cast<const unsigned char*>(sqlite3_column_blob(stmt_, i));
            const int n = sqlite3_column_bytes(stmt_, i);
            Blob b;
            b.bytes.assign(data, data + n);
            return b;
        }
    }
}

Row Statement::row() const {
    Row r;
    const int n = column_count();
    r.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) r.push_back(column(i));
    return r;
}

std::string quote_identifier(std::string_view name) {
    std::string out = "\"";
    for (char c : name) {
        out.push_back(c);
        if (c == '"') out.push_back('"');
    }
    out.push_back('"');
    return out;
}

} // namespace textsql::db
