#include <textsql/llmio.hpp>
#include <textsql/digest.hpp>
#include <textsql/strutil.hpp>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <future>
#include <unordered_map>

using nlohmann::json;

namespace textsql::llmio {

std::string request_digest(const ChatRequest& req) {
    const std::string material =
        req.model + '\x1f' + fmt::format("{:.6g}", req.temperature) + '\x1f' + req.prompt;
    return sha256_hex(material);
}

std::string embedding_digest(const std::string& backend_id, const std::string& text) {
    return sha256_hex("embed\x1f" + backend_id + '\x1f' + text);
}

// ---------------------------------------------------------------------------
// MockChatBackend

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string line_after(const std::string& text, std::string_view marker, size_t from) {
    const size_t at = text.rfind(marker, from);
    if (at == std::string::npos) return "";
    const size_t start = at + marker.size();
    const size_t end = text.find('\n', start);
    return str::trim(text.substr(start, end == std::string::npos ? std::string::npos : end - start));
}

} // namespace

std::string MockChatBackend::prompt_stage(const std::string& prompt) {
    if (prompt.find("[correct SQL]") != std::string::npos) return "correction";
    if (ends_with(prompt, "### Gold SQL:")) return "sql";
    if (ends_with(prompt, "### Replaced Question:")) return "csm";
    if (ends_with(prompt, "### Masked Question:")) {
        // the CoT prompt ends with the same header but instructs staged output
        if (prompt.find("labeling the sections exactly") != std::string::npos) return "cot";
        return "aqp";
    }
    return "";
}

std::string MockChatBackend::prompt_question(const std::string& prompt) {
    const std::string stage = prompt_stage(prompt);
    if (stage == "correction") return line_after(prompt, "[Query]\n-- ", std::string::npos);
    return line_after(prompt, "### Original Question: ", std::string::npos);
}

void MockChatBackend::add_rule(Rule rule) {
    std::lock_guard lock(mutex_);
    rules_.push_back(std::move(rule));
}

void MockChatBackend::set_default_response(std::string text) {
    std::lock_guard lock(mutex_);
    default_response_ = std::move(text);
}

void MockChatBackend::set_responder(std::function<std::optional<std::string>(const ChatRequest&)> fn) {
    std::lock_guard lock(mutex_);
    responder_ = std::move(fn);
}

ChatResponse MockChatBackend::complete(const ChatRequest& req) {
    calls_.fetch_add(1);
    std::lock_guard lock(mutex_);
    ChatResponse resp;
    if (responder_) {
        if (auto r = responder_(req)) {
            resp.text = *r;
            return resp;
        }
    }
    const std::string stage = prompt_stage(req.prompt);
    const std::string question = prompt_question(req.prompt);
    const std::string digest = request_digest(req);
    for (const auto& rule : rules_) {
        if (rule.stage && *rule.stage != stage) continue;
        if (rule.question && *rule.question != question) continue;
        if (rule.digest && *rule.digest != digest) continue;
        if (rule.contains && req.prompt.find(*rule.contains) == std::string::npos) continue;
        resp.text = rule.response;
        return resp;
    }
    if (default_response_) {
        resp.text = *default_response_;
        return resp;
    }
    throw TransportError("mock backend has no scripted response (stage '" + stage + "', question '" +
                         question + "')");
}

// ---------------------------------------------------------------------------
// Transcript

struct TranscriptWriter::Impl {
    std::ofstream out;
    std::mutex mutex;
};

TranscriptWriter::TranscriptWriter(const std::filesystem::path& path) : impl_(std::make_shared<Impl>()) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    impl_->out.open(path, std::ios::app);
    if (!impl_->out) throw IoError("cannot open transcript for append: " + path.string());
}

void TranscriptWriter::record_chat(const std::string& digest, const ChatRequest& req,
                                   const ChatResponse& resp) {
    json line = {
        {"kind", "chat"},
        {"digest", digest},
        {"request",
         {{"model", req.model}, {"temperature", req.temperature}, {"prompt", req.prompt}}},
        {"response",
         {{"text", resp.text},
          {"prompt_tokens", resp.prompt_tokens},
          {"completion_tokens", resp.completion_tokens}}},
    };
    std::lock_guard lock(impl_->mutex);
    impl_->out << line.dump() << '\n';
    impl_->out.flush();
}

void TranscriptWriter::record_embedding(const std::string& digest, const std::string& text,
                                        const EmbeddingVector& vec) {
    json line = {
        {"kind", "embed"},
        {"digest", digest},
        {"text", text},
        {"vector", vec},
    };
    std::lock_guard lock(impl_->mutex);
    impl_->out << line.dump() << '\n';
    impl_->out.flush();
}

namespace {

void for_each_transcript_line(const std::filesystem::path& path,
                              const std::function<void(const json&, size_t)>& fn) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open transcript: " + path.string());
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (str::trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        fn(j, lineno);
    }
}

} // namespace

// ---------------------------------------------------------------------------
// ReplayChatBackend

struct ReplayChatBackend::Impl {
    std::unordered_map<std::string, ChatResponse> by_digest;
};

ReplayChatBackend::ReplayChatBackend(const std::filesystem::path& transcript)
    : impl_(std::make_shared<Impl>()) {
    for_each_transcript_line(transcript, [&](const json& j, size_t) {
        if (j.value("kind", "") != "chat") return;
        ChatResponse resp;
        const auto& r = j.at("response");
        resp.text = r.at("text").get<std::string>();
        resp.prompt_tokens = r.value("prompt_tokens", 0);
        resp.completion_tokens = r.value("completion_tokens", 0);
        impl_->by_digest[j.at("digest").get<std::string>()] = std::move(resp);
    });
}

ChatResponse ReplayChatBackend::complete(const ChatRequest& req) {
    const std::string digest = request_digest(req);
    auto it = impl_->by_digest.find(digest);
    if (it == impl_->by_digest.end())
        throw ReplayMiss("no recorded response for digest " + digest + " (prompt starts '" +
                         req.prompt.substr(0, 60) + "...')");
    return it->second;
}

// ---------------------------------------------------------------------------
// HashEmbedBackend

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

uint64_t fnv1a(std::string_view s, uint64_t salt) {
    uint64_t h = 0xcbf29ce484222325ULL ^ salt;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void l2_normalize(EmbeddingVector& v) {
    double norm = 0;
    for (float x : v) norm += static_cast<double>(x) * x;
    norm = std::sqrt(norm);
    if (norm == 0) {
        if (!v.empty()) v[0] = 1.0f;
        return;
    }
    for (float& x : v) x = static_cast<float>(x / norm);
}

} // namespace

HashEmbedBackend::HashEmbedBackend(int dim, uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim < 1) throw ConfigError("embedding dimension must be >= 1");
}

std::string HashEmbedBackend::id() const {
    return fmt::format("hash-ngram-d{}-s{:x}", dim_, seed_);
}

std::vector<EmbeddingVector> HashEmbedBackend::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw ConfigError("embed: texts must be non-empty");
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& raw : texts) {
        const std::string text = " " + str::lower(str::collapse_ws(raw)) + " ";
        EmbeddingVector vec(static_cast<size_t>(dim_), 0.0f);
        for (int n = 1; n <= 3; ++n) {
            if (static_cast<size_t>(n) > text.size()) break;
            for (size_t i = 0; i + n <= text.size(); ++i) {
                const uint64_t h = fnv1a({text.data() + i, static_cast<size_t>(n)}, seed_ + n);
                uint64_t state = splitmix64(h);
                // Rademacher projection: one sign bit per dimension.
                for (int d = 0; d < dim_; ++d) {
                    if (d % 64 == 0) state = splitmix64(state);
                    const float sign = (state >> (d % 64)) & 1 ? 1.0f : -1.0f;
                    vec[static_cast<size_t>(d)] += sign;
                }
            }
        }
        l2_normalize(vec);
        out.push_back(std::move(vec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// ReplayEmbedBackend

struct ReplayEmbedBackend::Impl {
    std::unordered_map<std::string, EmbeddingVector> by_text;
};

ReplayEmbedBackend::ReplayEmbedBackend(const std::filesystem::path& transcript)
    : impl_(std::make_shared<Impl>()) {
    for_each_transcript_line(transcript, [&](const json& j, size_t) {
        if (j.value("kind", "") != "embed") return;
        auto vec = j.at("vector").get<EmbeddingVector>();
        if (dim_ == 0) dim_ = static_cast<int>(vec.size());
        impl_->by_text[j.at("text").get<std::string>()] = std::move(vec);
    });
}

std::vector<EmbeddingVector> ReplayEmbedBackend::embed(const std::vector<std::string>& texts) {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        auto it = impl_->by_text.find(t);
        if (it == impl_->by_text.end())
            throw ReplayMiss("no recorded embedding for text '" + t.substr(0, 60) + "'");
        out.push_back(it->second);
    }
    return out;
}

// ---------------------------------------------------------------------------
// LlmClient

namespace {

struct InFlight {
    std::shared_future<ChatResponse> future;
};

std::filesystem::path chat_cache_file(const std::filesystem::path& dir, const std::string& digest) {
    return dir / "chat" / (digest + ".json");
}

std::filesystem::path embed_cache_file(const std::filesystem::path& dir, const std::string& digest) {
    return dir / "embed" / (digest + ".json");
}

std::optional<ChatResponse> load_chat_cache(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) return std::nullopt;
    try {
        const json j = json::parse(in);
        ChatResponse resp;
        resp.text = j.at("text").get<std::string>();
        resp.prompt_tokens = j.value("prompt_tokens", 0);
        resp.completion_tokens = j.value("completion_tokens", 0);
        return resp;
    } catch (const json::exception&) {
        return std::nullopt; // treat a corrupt cache entry as a miss
    }
}

void store_chat_cache(const std::filesystem::path& file, const ChatResponse& resp) {
    std::filesystem::create_directories(file.parent_path());
    const json j = {{"text", resp.text},
                    {"prompt_tokens", resp.prompt_tokens},
                    {"completion_tokens", resp.completion_tokens}};
    std::ofstream out(file, std::ios::trunc);
    out << j.dump();
}

} // namespace

// Bounds concurrent upstream calls without serializing cache hits.
class ConcurrencyGate {
public:
    explicit ConcurrencyGate(int limit) : limit_(limit) {}

    void acquire() {
        if (limit_ <= 0) return;
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return active_ < limit_; });
        ++active_;
    }
    void release() {
        if (limit_ <= 0) return;
        {
            std::lock_guard lock(mutex_);
            --active_;
        }
        cv_.notify_one();
    }

private:
    int limit_;
    int active_ = 0;
    std::mutex mutex_;
    std::condition_variable cv_;
};

struct LlmClient::Impl {
    ClientOptions options;
    std::mutex mutex;
    std::unordered_map<std::string, ChatResponse> memory;
    std::unordered_map<std::string, InFlight> inflight;
    std::unique_ptr<ConcurrencyGate> gate;
};

LlmClient::LlmClient(std::shared_ptr<ChatBackend> backend, ClientOptions options)
    : impl_(std::make_shared<Impl>()), backend_(std::move(backend)) {
    impl_->options = std::move(options);
    impl_->gate = std::make_unique<ConcurrencyGate>(impl_->options.max_concurrent);
    backend_id_ = backend_->id();
}

ChatResponse LlmClient::complete(const ChatRequest& req) {
    if (req.prompt.empty()) throw ConfigError("chat request with empty prompt");
    if (req.temperature < 0) throw ConfigError("chat request with negative temperature");

    const std::string digest = request_digest(req);
    std::promise<ChatResponse> promise;
    {
        std::unique_lock lock(impl_->mutex);
        if (auto it = impl_->memory.find(digest); it != impl_->memory.end()) {
            ChatResponse resp = it->second;
            resp.cache_hit = true;
            return resp;
        }
        if (auto it = impl_->inflight.find(digest); it != impl_->inflight.end()) {
            auto future = it->second.future;
            lock.unlock();
            ChatResponse resp = future.get(); // rethrows leader failures
            resp.cache_hit = true;
            return resp;
        }
        impl_->inflight[digest] = InFlight{promise.get_future().share()};
    }

    auto settle = [&](const ChatResponse& resp) {
        std::lock_guard lock(impl_->mutex);
        impl_->memory[digest] = resp;
        impl_->inflight.erase(digest);
    };

    try {
        ChatResponse resp;
        bool from_disk = false;
        if (!impl_->options.cache_dir.empty()) {
            if (auto cached = load_chat_cache(chat_cache_file(impl_->options.cache_dir, digest))) {
                resp = *cached;
                resp.cache_hit = true;
                from_disk = true;
            }
        }
        if (!from_disk) {
            impl_->gate->acquire();
            const auto t0 = std::chrono::steady_clock::now();
            try {
                resp = backend_->complete(req);
            } catch (...) {
                impl_->gate->release();
                throw;
            }
            impl_->gate->release();
            resp.latency_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            resp.cache_hit = false;
            upstream_calls_.fetch_add(1);
            if (resp.prompt_tokens == 0 && impl_->options.fallback_token_counter)
                resp.prompt_tokens = impl_->options.fallback_token_counter(req.prompt);
            if (resp.completion_tokens == 0 && impl_->options.fallback_token_counter)
                resp.completion_tokens = impl_->options.fallback_token_counter(resp.text);
            if (!impl_->options.cache_dir.empty())
                store_chat_cache(chat_cache_file(impl_->options.cache_dir, digest), resp);
        }
        if (impl_->options.transcript) impl_->options.transcript->record_chat(digest, req, resp);
        settle(resp);
        promise.set_value(resp);
        return resp;
    } catch (...) {
        {
            std::lock_guard lock(impl_->mutex);
            impl_->inflight.erase(digest);
        }
        promise.set_exception(std::current_exception());
        throw;
    }
}

// ---------------------------------------------------------------------------
// EmbedClient

struct EmbedClient::Impl {
    ClientOptions options;
    std::mutex mutex;
    std::unordered_map<std::string, EmbeddingVector> memory; // by digest
};

EmbedClient::EmbedClient(std::shared_ptr<EmbedBackend> backend, ClientOptions options)
    : impl_(std::make_shared<Impl>()), backend_(std::move(backend)) {
    impl_->options = std::move(options);
    backend_id_ = backend_->id();
}

EmbeddingVector EmbedClient::embed_one(const std::string& text) {
    return embed({text}).front();
}

std::vector<EmbeddingVector> EmbedClient::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw ConfigError("embed: texts must be non-empty");

    std::vector<EmbeddingVector> out(texts.size());
    std::vector<size_t> missing;
    std::vector<std::string> missing_texts;

    {
        std::lock_guard lock(impl_->mutex);
        for (size_t i = 0; i < texts.size(); ++i) {
            const std::string digest = embedding_digest(backend_id_, texts[i]);
            if (auto it = impl_->memory.find(digest); it != impl_->memory.end()) {
                out[i] = it->second;
                continue;
            }
            if (!impl_->options.cache_dir.empty()) {
                std::ifstream in(embed_cache_file(impl_->options.cache_dir, digest));
                if (in) {
                    try {
                        auto vec = json::parse(in).at("vector").get<EmbeddingVector>();
                        impl_->memory[digest] = vec;
                        out[i] = std::move(vec);
                        continue;
                    } catch (const json::exception&) {
                        // fall through to recompute
                    }
                }
            }
            missing.push_back(i);
            missing_texts.push_back(texts[i]);
        }
    }

    if (!missing.empty()) {
        auto fresh = backend_->embed(missing_texts);
        upstream_calls_.fetch_add(1);
        if (fresh.size() != missing_texts.size())
            throw TransportError("embedding backend returned a short batch");
        const size_t want_dim = static_cast<size_t>(backend_->dim());
        std::lock_guard lock(impl_->mutex);
        for (size_t k = 0; k < missing.size(); ++k) {
            auto& vec = fresh[k];
            if (want_dim != 0 && vec.size() != want_dim)
                throw TransportError(
                    fmt::format("embedding dimension mismatch: got {}, expected {}", vec.size(),
                                want_dim));
            l2_normalize(vec);
            const std::string digest = embedding_digest(backend_id_, missing_texts[k]);
            impl_->memory[digest] = vec;
            if (!impl_->options.cache_dir.empty()) {
                const auto file = embed_cache_file(impl_->options.cache_dir, digest);
                std::filesystem::create_directories(file.parent_path());
                std::ofstream cache(file, std::ios::trunc);
                cache << json{{"vector", vec}}.dump();
            }
            if (impl_->options.transcript)
                impl_->options.transcript->record_embedding(digest, missing_texts[k], vec);
            out[missing[k]] = std::move(vec);
        }
    }
    return out;
}

} // namespace textsql::llmio
