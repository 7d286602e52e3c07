#pragma once

#include <textsql/errors.hpp>

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace textsql::llmio {

struct ChatRequest {
    std::string prompt;
    std::string model = "default";
    double temperature = 0.0;
    int max_tokens = 1024;
};

struct ChatResponse {
    std::string text;
    int prompt_tokens = 0;
    int completion_tokens = 0;
    double latency_ms = 0;
    bool cache_hit = false;
};

/// Collision-resistant key over (model, temperature, prompt).
std::string request_digest(const ChatRequest& req);

class TransportError : public Error {
public:
    using Error::Error;
};

class ReplayMiss : public Error {
public:
    using Error::Error;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatResponse complete(const ChatRequest& req) = 0;
    virtual std::string id() const = 0;
};

/// Scriptable backend for tests and dry fixtures. Rules are evaluated in
/// order; the first match wins. A rule can match on the prompt's stage (the
/// template's answer header), the final "### Original Question:" line, an
/// exact request digest, or a plain substring.
class MockChatBackend : public ChatBackend {
public:
    struct Rule {
        std::optional<std::string> stage;    // aqp|csm|sql|correction|cot
        std::optional<std::string> question; // equals the prompt's final question
        std::optional<std::string> digest;
        std::optional<std::string> contains;
        std::string response;
    };

    void add_rule(Rule rule);
    void set_default_response(std::string text);
    /// Full programmatic control; consulted before rules.
    void set_responder(std::function<std::optional<std::string>(const ChatRequest&)> fn);

    ChatResponse complete(const ChatRequest& req) override;
    std::string id() const override { return "mock"; }

    int calls() const { return calls_.load(); }

    /// Which template a rendered prompt belongs to, judged by its trailing
    /// answer header ("cot" before "aqp": both end with the masked-question
    /// header, the CoT prompt also carries the staged-output instruction).
    static std::string prompt_stage(const std::string& prompt);
    /// The final "### Original Question:" line ("[Query]" block for
    /// correction prompts).
    static std::string prompt_question(const std::string& prompt);

private:
    std::vector<Rule> rules_;
    std::optional<std::string> default_response_;
    std::function<std::optional<std::string>(const ChatRequest&)> responder_;
    std::atomic<int> calls_{0};
    std::mutex mutex_;
};

/// Serves recorded responses from a transcript; unknown prompts raise
/// ReplayMiss.
class ReplayChatBackend : public ChatBackend {
public:
    explicit ReplayChatBackend(const std::filesystem::path& transcript);
    ChatResponse complete(const ChatRequest& req) override;
    std::string id() const override { return "replay"; }

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

struct HttpChatConfig {
    std::string base_url;             // e.g. http://localhost:8080/v1
    std::string model;
    std::string api_key_env = "LLM_API_KEY";
    int max_retries = 3;
    int timeout_seconds = 120;
};

/// Chat-completions-style HTTP backend (POST {base_url}/chat/completions).
class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(HttpChatConfig config);
    ChatResponse complete(const ChatRequest& req) override;
    std::string id() const override;

private:
    HttpChatConfig config_;
};

using EmbeddingVector = std::vector<float>;

class EmbedBackend {
public:
    virtual ~EmbedBackend() = default;
    /// One unit-normalized vector per input text, all of dimension dim().
    virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
    virtual int dim() const = 0;
    virtual std::string id() const = 0;
};

/// Deterministic stand-in embedder: character n-gram counts projected through
/// a seeded pseudo-random matrix, L2-normalized. Order-sensitive similarity
/// without a model.
class HashEmbedBackend : public EmbedBackend {
public:
    explicit HashEmbedBackend(int dim = 64, uint64_t seed = 0x5eed);
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
    int dim() const override { return dim_; }
    std::string id() const override;

private:
    int dim_;
    uint64_t seed_;
};

struct HttpEmbedConfig {
    std::string base_url;
    std::string model;
    std::string api_key_env = "LLM_API_KEY";
    int dim = 0; // 0: take the dimension from the first response
    int max_retries = 3;
    int timeout_seconds = 120;
};

class HttpEmbedBackend : public EmbedBackend {
public:
    explicit HttpEmbedBackend(HttpEmbedConfig config);
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
    int dim() const override { return dim_; }
    std::string id() const override;

private:
    HttpEmbedConfig config_;
    int dim_;
};

/// Append-only JSONL transcript of chat and embedding exchanges; replaying it
/// reproduces a run without upstream calls.
class TranscriptWriter {
public:
    explicit TranscriptWriter(const std::filesystem::path& path);
    void record_chat(const std::string& digest, const ChatRequest& req, const ChatResponse& resp);
    void record_embedding(const std::string& digest, const std::string& text,
                          const EmbeddingVector& vec);

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

struct ClientOptions {
    std::filesystem::path cache_dir;               // empty: in-memory cache only
    std::shared_ptr<TranscriptWriter> transcript;  // optional recording
    std::function<int(std::string_view)> fallback_token_counter; // when backend reports none
    int max_concurrent = 8; // upstream requests in flight at once; 0 = unlimited
};

/// Caching front of a chat backend: persistent response cache keyed by
/// request digest, single-flight per key, optional transcript recording.
class LlmClient {
public:
    LlmClient(std::shared_ptr<ChatBackend> backend, ClientOptions options = {});

    ChatResponse complete(const ChatRequest& req);
    int upstream_calls() const { return upstream_calls_.load(); }
    const std::string& backend_id() const { return backend_id_; }

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
    std::shared_ptr<ChatBackend> backend_;
    std::string backend_id_;
    std::atomic<int> upstream_calls_{0};
};

/// Caching front of an embedding backend (per-text cache, single-flight).
class EmbedClient {
public:
    EmbedClient(std::shared_ptr<EmbedBackend> backend, ClientOptions options = {});

    EmbeddingVector embed_one(const std::string& text);
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts);
    int upstream_calls() const { return upstream_calls_.load(); }
    int dim() const { return backend_->dim(); }
    const std::string& backend_id() const { return backend_id_; }

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
    std::shared_ptr<EmbedBackend> backend_;
    std::string backend_id_;
    std::atomic<int> upstream_calls_{0};
};

/// Replay-only embedder fed from a transcript.
class ReplayEmbedBackend : public EmbedBackend {
public:
    explicit ReplayEmbedBackend(const std::filesystem::path& transcript);
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
    int dim() const override { return dim_; }
    std::string id() const override { return "replay-embed"; }

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
    int dim_ = 0;
};

std::string embedding_digest(const std::string& backend_id, const std::string& text);

} // namespace textsql::llmio
