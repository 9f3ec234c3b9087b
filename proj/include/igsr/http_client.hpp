#pragma once

// Chat-completions HTTP client. One POST per call to
// {base_url}/chat/completions; transient failures (connection errors, 429,
// 5xx) retry with exponential backoff up to the configured cap. Usage is
// accumulated into the shared budget meter; once the meter's latch is raised
// the client aborts with BudgetExceeded so the search can stop cleanly.

#include "igsr/propose.hpp"

// Keep httplib after the Eigen-using headers: its transitive system includes
// define macros that break Eigen templates when seen first.
#include <cstdlib>
#include <httplib.h>
#include <json.hpp>
#include <thread>

namespace igsr {

namespace detail {

struct SplitUrl {
    std::string host;  // scheme://host[:port]
    std::string path;  // path prefix, no trailing slash
};

inline SplitUrl split_base_url(const std::string& base_url) {
    auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("llm.base_url must include a scheme: '" + base_url + "'");
    auto path_start = base_url.find('/', scheme_end + 3);
    SplitUrl out;
    if (path_start == std::string::npos) {
        out.host = base_url;
    } else {
        out.host = base_url.substr(0, path_start);
        out.path = base_url.substr(path_start);
        while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
    }
    return out;
}

inline bool transient_status(int status) {
    return status == 429 || (status >= 500 && status < 600);
}

} // namespace detail

inline ChatResponse llm_complete(const ChatRequest& req, const LlmEndpointConfig& cfg,
                                 BudgetMeter& meter, int* retries_out = nullptr) {
    if (meter.latched()) throw BudgetExceeded("token budget exceeded");
    if (cfg.base_url.empty()) throw ConfigError("llm.base_url is not configured");
    const char* key = std::getenv(cfg.api_key_env.c_str());
    if (!key || !*key)
        throw ConfigError("API key environment variable " + cfg.api_key_env + " is not set");

    nlohmann::json body;
    body["model"] = req.model;
    body["temperature"] = req.temperature;
    body["messages"] = nlohmann::json::array();
    for (const auto& m : req.messages)
        body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    const std::string payload = body.dump();

    auto url = detail::split_base_url(cfg.base_url);
    const std::string endpoint = url.path + "/chat/completions";
    httplib::Client client(url.host);
    client.set_read_timeout(300, 0);
    client.set_connection_timeout(10, 0);
    httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};

    int retries = 0;
    std::string last_error;
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        if (attempt > 0) {
            ++retries;
            auto delay = std::chrono::milliseconds(
                static_cast<long long>(cfg.backoff_initial_ms) * (1LL << (attempt - 1)));
            std::this_thread::sleep_for(delay);
        }
        auto res = client.Post(endpoint, headers, payload, "application/json");
        if (!res) {
            last_error = "connection failure: " + httplib::to_string(res.error());
            continue;
        }
        if (detail::transient_status(res->status)) {
            last_error = "transient HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status < 200 || res->status >= 300)
            throw HttpError("chat completion failed with HTTP " + std::to_string(res->status) +
                            ": " + res->body.substr(0, 500));

        auto j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded()) throw HttpError("chat completion returned malformed JSON");
        ChatResponse out;
        try {
            out.content = j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw HttpError(std::string("unexpected chat completion shape: ") + e.what());
        }
        if (j.contains("usage")) {
            out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0LL);
            out.usage.completion_tokens = j["usage"].value("completion_tokens", 0LL);
        }
        meter.add(out.usage);
        if (retries_out) *retries_out = retries;
        return out;
    }
    throw HttpError("chat completion failed after " + std::to_string(cfg.max_retries) +
                    " retries: " + last_error);
}

class LlmBackend : public CompletionBackend {
public:
    LlmBackend(LlmEndpointConfig cfg, std::shared_ptr<BudgetMeter> meter)
        : cfg_(std::move(cfg)), meter_(std::move(meter)) {}

    ChatReply complete(PromptKind, const std::string& prompt, const CallContext&,
                       const ProposerContext&, const PruneFeedback*) override {
        ChatRequest req;
        req.model = cfg_.model;
        req.temperature = cfg_.temperature;
        req.messages.push_back({"user", prompt});
        ChatResponse resp = llm_complete(req, cfg_, *meter_);
        return {resp.content, resp.usage};
    }

    std::string name() const override { return "llm"; }

private:
    LlmEndpointConfig cfg_;
    std::shared_ptr<BudgetMeter> meter_;
};

} // namespace igsr
