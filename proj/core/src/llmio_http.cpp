#include <textsql/llmio.hpp>
#include <textsql/strutil.hpp>

#include <httplib.h>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <thread>

using nlohmann::json;

namespace textsql::llmio {

namespace {

struct ParsedUrl {
    std::string host_port; // scheme://host[:port]
    std::string prefix;    // path prefix, no trailing slash
};

ParsedUrl parse_base_url(const std::string& base_url) {
    const size_t scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("base_url must include a scheme: " + base_url);
    const size_t path_start = base_url.find('/', scheme_end + 3);
    ParsedUrl out;
    if (path_start == std::string::npos) {
        out.host_port = base_url;
    } else {
        out.host_port = base_url.substr(0, path_start);
        out.prefix = base_url.substr(path_start);
        while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    }
    return out;
}

std::string api_key_from_env(const std::string& env_name) {
    if (env_name.empty()) return "";
    const char* v = std::getenv(env_name.c_str());
    return v ? v : "";
}

httplib::Headers auth_headers(const std::string& env_name) {
    httplib::Headers headers;
    const std::string key = api_key_from_env(env_name);
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
    return headers;
}

bool retryable_status(int status) {
    return status == 429 || status >= 500;
}

int retry_after_ms(const httplib::Response& res, int attempt) {
    if (res.has_header("Retry-After")) {
        try {
            const int secs = std::stoi(res.get_header_value("Retry-After"));
            return std::min(secs * 1000, 5000);
        } catch (const std::exception&) {
        }
    }
    return std::min(100 * (1 << attempt), 2000);
}

json post_json_with_retries(const ParsedUrl& url, const std::string& path, const json& body,
                            const httplib::Headers& headers, int max_retries, int timeout_seconds) {
    std::string last_error;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        httplib::Client client(url.host_port);
        client.set_connection_timeout(timeout_seconds, 0);
        client.set_read_timeout(timeout_seconds, 0);
        client.set_write_timeout(timeout_seconds, 0);

        auto res = client.Post((url.prefix + path).c_str(), headers, body.dump(), "application/json");
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
        } else if (res->status >= 200 && res->status < 300) {
            try {
                return json::parse(res->body);
            } catch (const json::parse_error& e) {
                throw TransportError(std::string("malformed backend response: ") + e.what());
            }
        } else if (retryable_status(res->status)) {
            last_error = fmt::format("HTTP {} from backend", res->status);
            if (attempt < max_retries)
                std::this_thread::sleep_for(std::chrono::milliseconds(retry_after_ms(*res, attempt)));
            continue;
        } else {
            throw TransportError(fmt::format("HTTP {} from backend: {}", res->status,
                                             res->body.substr(0, 200)));
        }
        if (attempt < max_retries)
            std::this_thread::sleep_for(std::chrono::milliseconds(std::min(100 * (1 << attempt), 2000)));
    }
    throw TransportError("request failed after retries: " + last_error);
}

} // namespace

HttpChatBackend::HttpChatBackend(HttpChatConfig config) : config_(std::move(config)) {
    parse_base_url(config_.base_url); // validate eagerly
}

std::string HttpChatBackend::id() const {
    return "http:" + config_.model + "@" + config_.base_url;
}

ChatResponse HttpChatBackend::complete(const ChatRequest& req) {
    const ParsedUrl url = parse_base_url(config_.base_url);
    const json body = {
        {"model", req.model.empty() || req.model == "default" ? config_.model : req.model},
        {"messages", json::array({{{"role", "user"}, {"content", req.prompt}}})},
        {"temperature", req.temperature},
        {"max_tokens", req.max_tokens},
    };
    const json reply = post_json_with_retries(url, "/chat/completions", body,
                                              auth_headers(config_.api_key_env),
                                              config_.max_retries, config_.timeout_seconds);
    ChatResponse resp;
    try {
        resp.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw TransportError(std::string("unexpected chat completion shape: ") + e.what());
    }
    if (reply.contains("usage")) {
        resp.prompt_tokens = reply["usage"].value("prompt_tokens", 0);
        resp.completion_tokens = reply["usage"].value("completion_tokens", 0);
    }
    return resp;
}

HttpEmbedBackend::HttpEmbedBackend(HttpEmbedConfig config)
    : config_(std::move(config)), dim_(config_.dim) {
    parse_base_url(config_.base_url);
}

std::string HttpEmbedBackend::id() const {
    return "http-embed:" + config_.model + "@" + config_.base_url;
}

std::vector<EmbeddingVector> HttpEmbedBackend::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw ConfigError("embed: texts must be non-empty");
    const ParsedUrl url = parse_base_url(config_.base_url);
    const json body = {{"model", config_.model}, {"input", texts}};
    const json reply = post_json_with_retries(url, "/embeddings", body,
                                              auth_headers(config_.api_key_env),
                                              config_.max_retries, config_.timeout_seconds);
    std::vector<EmbeddingVector> out;
    try {
        for (const auto& item : reply.at("data")) out.push_back(item.at("embedding").get<EmbeddingVector>());
    } catch (const json::exception& e) {
        throw TransportError(std::string("unexpected embedding response shape: ") + e.what());
    }
    if (out.size() != texts.size()) throw TransportError("embedding response batch size mismatch");
    for (const auto& v : out) {
        if (dim_ == 0) dim_ = static_cast<int>(v.size());
        if (static_cast<int>(v.size()) != dim_)
            throw TransportError(fmt::format("embedding dimension mismatch across batch: {} vs {}",
                                             v.size(), dim_));
    }
    return out;
}

} // namespace textsql::llmio
