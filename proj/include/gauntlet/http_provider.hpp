#pragma once

#include <chrono>
#include <cstdlib>
#include <string>

#include <httplib.h>

#include "gauntlet/gateway.hpp"

// Minimal chat-completions client for a live deployment. All tests run
// against the scripted mock; this exists so the CLI can point at a real
// endpoint without code changes.
//
// Expected endpoints:
//   POST {base}/v1/chat/completions   — OpenAI-style chat completion
//   POST {base}/v1/loglikelihood      — {"prefix_template","source","reasoning"}
//                                       -> {"loglik": <double>}; only used when
//                                       the provider declares the capability.

namespace gauntlet {

struct HttpProviderConfig {
    std::string endpoint; // e.g. "http://localhost:8080"
    std::string model;
    std::string api_key_env; // name of env var holding the bearer token, optional
    bool supports_loglik = false;
    int timeout_seconds = 120;
};

class HttpProvider : public Provider {
public:
    explicit HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
        if (config_.endpoint.empty()) {
            throw Error("config-error", "http provider requires provider.endpoint");
        }
    }

    CompletionResult complete(const CallContext&, const PromptRequest& request) override {
        json messages = json::array();
        for (const Message& m : request.role_messages) {
            messages.push_back(json{{"role", m.role}, {"content", m.content}});
        }
        json body{{"model", config_.model},
                  {"messages", messages},
                  {"max_tokens", request.max_response_tokens},
                  {"temperature",
                   request.temperature_mode == TemperatureMode::Deterministic ? 0.0 : 0.7}};

        auto start = std::chrono::steady_clock::now();
        json reply = post_json("/v1/chat/completions", body);
        auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();

        CompletionResult result;
        try {
            result.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
            if (reply.contains("usage")) {
                result.tokens.prompt = reply["usage"].value("prompt_tokens", 0);
                result.tokens.response = reply["usage"].value("completion_tokens", 0);
            }
        } catch (const json::exception& e) {
            throw Error("malformed-response", std::string("unexpected completion payload: ") +
                                                  e.what());
        }
        result.wall_millis = elapsed;
        return result;
    }

    ScoreResult score_loglik(const CallContext&, const LogLikelihoodRequest& request) override {
        json body{{"model", config_.model},
                  {"prefix_template",
                   request.prefix_template == PrefixTemplate::Vulnerable ? "vulnerable" : "safe"},
                  {"source", request.candidate_source},
                  {"reasoning", request.reasoning}};
        auto start = std::chrono::steady_clock::now();
        json reply = post_json("/v1/loglikelihood", body);
        auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();
        ScoreResult result;
        try {
            result.loglik = reply.at("loglik").get<double>();
        } catch (const json::exception& e) {
            throw Error("malformed-response", std::string("unexpected loglik payload: ") + e.what());
        }
        result.tokens.prompt = word_count(request.candidate_source) + word_count(request.reasoning);
        result.wall_millis = elapsed;
        return result;
    }

    bool supports_loglik() const override { return config_.supports_loglik; }

private:
    json post_json(const std::string& path, const json& body) {
        httplib::Client client(config_.endpoint);
        client.set_connection_timeout(config_.timeout_seconds, 0);
        client.set_read_timeout(config_.timeout_seconds, 0);
        httplib::Headers headers;
        if (!config_.api_key_env.empty()) {
            if (const char* key = std::getenv(config_.api_key_env.c_str())) {
                headers.emplace("Authorization", std::string("Bearer ") + key);
            }
        }
        auto res = client.Post(path, headers, body.dump(), "application/json");
        if (!res) {
            throw TransportError("no response from " + config_.endpoint + path);
        }
        if (res->status >= 500) {
            throw TransportError("server error " + std::to_string(res->status));
        }
        if (res->status != 200) {
            throw Error("provider-error",
                        "status " + std::to_string(res->status) + " from " + path);
        }
        try {
            return json::parse(res->body);
        } catch (const json::parse_error& e) {
            throw Error("malformed-response", std::string("response is not JSON: ") + e.what());
        }
    }

    HttpProviderConfig config_;
};

} // namespace gauntlet
