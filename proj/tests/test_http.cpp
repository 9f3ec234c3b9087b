#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "igsr/http_client.hpp"

using namespace igsr;

namespace {

struct LocalServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    explicit LocalServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
        server.Post("/v1/chat/completions", std::move(handler));
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~LocalServer() {
        server.stop();
        thread.join();
    }

    LlmEndpointConfig config() const {
        LlmEndpointConfig cfg;
        cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
        cfg.model = "test-model";
        cfg.max_retries = 3;
        cfg.backoff_initial_ms = 1;
        return cfg;
    }
};

std::string ok_body(const std::string& content, int prompt_tokens, int completion_tokens) {
    nlohmann::json j;
    j["choices"] = {{{"message", {{"role", "assistant"}, {"content", content}}}}};
    j["usage"] = {{"prompt_tokens", prompt_tokens}, {"completion_tokens", completion_tokens}};
    return j.dump();
}

ChatRequest sample_request() {
    ChatRequest req;
    req.model = "test-model";
    req.temperature = 1.0;
    req.messages.push_back({"user", "propose some terms"});
    return req;
}

} // namespace

TEST_CASE("llm_complete posts the chat payload and reads the reply") {
    setenv("IGSR_LLM_API_KEY", "sk-test", 1);
    std::string seen_body, seen_auth;
    LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
        seen_body = req.body;
        auto it = req.headers.find("Authorization");
        if (it != req.headers.end()) seen_auth = it->second;
        res.set_content(ok_body("TERMS\n```\nx1\n```", 12, 7), "application/json");
    });

    BudgetMeter meter(0);
    ChatResponse resp = llm_complete(sample_request(), server.config(), meter);
    CHECK(resp.content == "TERMS\n```\nx1\n```");
    CHECK(resp.usage.prompt_tokens == 12);
    CHECK(resp.usage.completion_tokens == 7);
    CHECK(meter.used().total() == 19);
    CHECK(seen_auth == "Bearer sk-test");

    auto body = nlohmann::json::parse(seen_body);
    CHECK(body["model"] == "test-model");
    CHECK(body["temperature"] == 1.0);
    CHECK(body["messages"][0]["role"] == "user");
}

TEST_CASE("transient failures retry with backoff until success") {
    setenv("IGSR_LLM_API_KEY", "sk-test", 1);
    std::atomic<int> calls{0};
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
        const int n = ++calls;
        if (n <= 2) {
            res.status = 503;
            res.set_content("busy", "text/plain");
        } else {
            res.set_content(ok_body("ok", 1, 1), "application/json");
        }
    });

    BudgetMeter meter(0);
    int retries = -1;
    ChatResponse resp = llm_complete(sample_request(), server.config(), meter, &retries);
    CHECK(resp.content == "ok");
    CHECK(retries == 2);
    CHECK(calls.load() == 3);
}

TEST_CASE("retries exhaust into an HttpError") {
    setenv("IGSR_LLM_API_KEY", "sk-test", 1);
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
        res.status = 503;
    });
    LlmEndpointConfig cfg = server.config();
    cfg.max_retries = 1;
    BudgetMeter meter(0);
    CHECK_THROWS_WITH_AS(llm_complete(sample_request(), cfg, meter),
                         doctest::Contains("after 1 retries"), HttpError);
}

TEST_CASE("non-transient HTTP statuses fail immediately") {
    setenv("IGSR_LLM_API_KEY", "sk-test", 1);
    std::atomic<int> calls{0};
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
        ++calls;
        res.status = 400;
        res.set_content("bad request", "text/plain");
    });
    BudgetMeter meter(0);
    CHECK_THROWS_AS(llm_complete(sample_request(), server.config(), meter), HttpError);
    CHECK(calls.load() == 1);
}

TEST_CASE("a latched budget aborts before any network call") {
    setenv("IGSR_LLM_API_KEY", "sk-test", 1);
    std::atomic<int> calls{0};
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
        ++calls;
        res.set_content(ok_body("ok", 1, 1), "application/json");
    });
    BudgetMeter meter(10);
    meter.add({300000, 0});
    meter.latch_if_exceeded();
    CHECK_THROWS_AS(llm_complete(sample_request(), server.config(), meter), BudgetExceeded);
    CHECK(calls.load() == 0);
}

TEST_CASE("a missing API key is a configuration error") {
    LlmEndpointConfig cfg;
    cfg.base_url = "http://127.0.0.1:1/v1";
    cfg.api_key_env = "IGSR_TEST_UNSET_KEY";
    unsetenv("IGSR_TEST_UNSET_KEY");
    BudgetMeter meter(0);
    CHECK_THROWS_AS(llm_complete(sample_request(), cfg, meter), ConfigError);
}
