#include <textsql/llmio.hpp>

#include <gtest/gtest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <thread>

using namespace textsql;
using nlohmann::json;

namespace {

/// Minimal chat-completions + embeddings server on a loopback port.
class StubServer {
public:
    StubServer() {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                    httplib::Response& res) {
            chat_requests.fetch_add(1);
            if (fail_first_with_500 && chat_requests.load() == 1) {
                res.status = 500;
                return;
            }
            if (rate_limit_first && chat_requests.load() == 1) {
                res.status = 429;
                res.set_header("Retry-After", "0");
                return;
            }
            const json body = json::parse(req.body);
            last_model = body.value("model", "");
            last_auth = req.get_header_value("Authorization");
            const json reply = {
                {"choices",
                 json::array({{{"message", {{"role", "assistant"}, {"content", "pong"}}}}})},
                {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 1}}},
            };
            res.set_content(reply.dump(), "application/json");
        });
        server_.Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
            const json body = json::parse(req.body);
            json data = json::array();
            for (size_t i = 0; i < body.at("input").size(); ++i)
                data.push_back({{"embedding", {0.6, 0.8, 0.0}}, {"index", i}});
            res.set_content(json{{"data", data}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this]() { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

    std::atomic<int> chat_requests{0};
    bool fail_first_with_500 = false;
    bool rate_limit_first = false;
    std::string last_model;
    std::string last_auth;

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

} // namespace

TEST(HttpChatBackend, CompletesAgainstLocalServer) {
    StubServer server;
    llmio::HttpChatConfig config;
    config.base_url = server.base_url();
    config.model = "test-model";
    config.api_key_env = "TEXTSQL_TEST_KEY";
    setenv("TEXTSQL_TEST_KEY", "sekrit", 1);

    llmio::HttpChatBackend backend(config);
    llmio::ChatRequest req;
    req.prompt = "ping";
    const auto resp = backend.complete(req);
    EXPECT_EQ(resp.text, "pong");
    EXPECT_EQ(resp.prompt_tokens, 12);
    EXPECT_EQ(resp.completion_tokens, 1);
    EXPECT_EQ(server.last_model, "test-model");
    EXPECT_EQ(server.last_auth, "Bearer sekrit");
    unsetenv("TEXTSQL_TEST_KEY");
}

TEST(HttpChatBackend, RetriesAfterServerError) {
    StubServer server;
    server.fail_first_with_500 = true;
    llmio::HttpChatConfig config;
    config.base_url = server.base_url();
    config.model = "m";
    config.max_retries = 2;

    llmio::HttpChatBackend backend(config);
    llmio::ChatRequest req;
    req.prompt = "ping";
    const auto resp = backend.complete(req);
    EXPECT_EQ(resp.text, "pong");
    EXPECT_EQ(server.chat_requests.load(), 2);
}

TEST(HttpChatBackend, RateLimitHonorsRetryAfter) {
    StubServer server;
    server.rate_limit_first = true;
    llmio::HttpChatConfig config;
    config.base_url = server.base_url();
    config.model = "m";
    config.max_retries = 2;

    llmio::HttpChatBackend backend(config);
    llmio::ChatRequest req;
    req.prompt = "ping";
    EXPECT_EQ(backend.complete(req).text, "pong");
    EXPECT_EQ(server.chat_requests.load(), 2);
}

TEST(HttpChatBackend, TransportFailureAfterRetries) {
    llmio::HttpChatConfig config;
    config.base_url = "http://127.0.0.1:1"; // nothing listens here
    config.model = "m";
    config.max_retries = 1;
    config.timeout_seconds = 1;
    llmio::HttpChatBackend backend(config);
    llmio::ChatRequest req;
    req.prompt = "ping";
    EXPECT_THROW(backend.complete(req), llmio::TransportError);
}

TEST(HttpChatBackend, MalformedBaseUrlRejected) {
    llmio::HttpChatConfig config;
    config.base_url = "not-a-url";
    EXPECT_THROW(llmio::HttpChatBackend backend(config), ConfigError);
}

TEST(HttpEmbedBackend, EmbedsAndNormalizesThroughClient) {
    StubServer server;
    llmio::HttpEmbedConfig config;
    config.base_url = server.base_url();
    config.model = "embed-model";

    auto backend = std::make_shared<llmio::HttpEmbedBackend>(config);
    llmio::EmbedClient client(backend);
    const auto vecs = client.embed({"a", "b"});
    ASSERT_EQ(vecs.size(), 2u);
    EXPECT_EQ(backend->dim(), 3);
    // the stub returns (0.6, 0.8, 0) which is already unit norm
    EXPECT_NEAR(vecs[0][0], 0.6f, 1e-6);
    EXPECT_NEAR(vecs[0][1], 0.8f, 1e-6);
}
