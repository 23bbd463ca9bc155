#pragma once

#include <chrono>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gauntlet/core.hpp"
#include "gauntlet/error.hpp"

// Single abstraction over all model interaction: chat-style completions for
// the validator/inspector, conditional log-likelihood scoring for the filter.
// Stages hold only a Gateway handle, so every model call lands in the ledger.

namespace gauntlet {

enum class TemperatureMode { Deterministic, Sampled };

struct Message {
    std::string role;
    std::string content;

    bool operator==(const Message&) const = default;
};

struct PromptRequest {
    std::vector<Message> role_messages; // at least one
    int max_response_tokens = 1024;
    TemperatureMode temperature_mode = TemperatureMode::Deterministic;
};

enum class PrefixTemplate { Vulnerable, Safe };

struct LogLikelihoodRequest {
    PrefixTemplate prefix_template = PrefixTemplate::Vulnerable;
    std::string candidate_source; // non-empty
    std::string reasoning;
};

struct TokenCounts {
    std::int64_t prompt = 0;
    std::int64_t response = 0;
};

struct CompletionResult {
    std::string text;
    TokenCounts tokens;
    std::int64_t wall_millis = 0;
};

struct ScoreResult {
    double loglik = 0.0;
    TokenCounts tokens;
    std::int64_t wall_millis = 0;
};

// Attribution for ledger entries. When candidate_ledger is set, the entry is
// mirrored there so per-candidate cost can be reconciled against the run total.
struct CallContext {
    Stage stage = Stage::Matcher;
    std::string candidate_id;
    CostLedger* candidate_ledger = nullptr;
};

// Retryable transport-level failure (connection refused, 5xx, timeout).
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Provider {
public:
    virtual ~Provider() = default;
    virtual CompletionResult complete(const CallContext& ctx, const PromptRequest& request) = 0;
    virtual ScoreResult score_loglik(const CallContext& ctx, const LogLikelihoodRequest& request) = 0;
    virtual bool supports_loglik() const = 0;
};

// Deterministic token accounting for the mock: whitespace-delimited words.
inline std::int64_t word_count(std::string_view text) {
    std::int64_t n = 0;
    bool in_word = false;
    for (char c : text) {
        bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
        if (!ws && !in_word) ++n;
        in_word = !ws;
    }
    return n;
}

// ---------------------------------------------------------------------------
// Scripted mock provider: an ordered response queue per (stage, candidate_id)
// key. Consuming past the end of a queue is an error.

struct ScriptEntry {
    enum class Kind { Completion, LogLik, TransportFail };
    Kind kind = Kind::Completion;
    std::string text;          // Completion
    double ll_vulnerable = 0;  // LogLik
    double ll_safe = 0;
};

inline ScriptEntry scripted_completion(std::string text) {
    ScriptEntry e;
    e.kind = ScriptEntry::Kind::Completion;
    e.text = std::move(text);
    return e;
}

inline ScriptEntry scripted_loglik(double vulnerable, double safe) {
    ScriptEntry e;
    e.kind = ScriptEntry::Kind::LogLik;
    e.ll_vulnerable = vulnerable;
    e.ll_safe = safe;
    return e;
}

inline ScriptEntry scripted_transport_fail() {
    ScriptEntry e;
    e.kind = ScriptEntry::Kind::TransportFail;
    return e;
}

class ScriptedBehavior {
public:
    using Key = std::pair<int, std::string>; // (stage, candidate_id)

    void push(Stage stage, const std::string& candidate_id, ScriptEntry entry) {
        queues_[{static_cast<int>(stage), candidate_id}].push_back(std::move(entry));
    }

    std::map<Key, std::deque<ScriptEntry>>& queues() { return queues_; }

    // One JSON object per line:
    //   {"stage":"Matcher","candidate_id":"c1","type":"completion","text":"..."}
    //   {"stage":"Filter","candidate_id":"c1","type":"loglik","vulnerable":-1.0,"safe":-3.0}
    //   {"stage":"Filter","candidate_id":"c1","type":"transport-fail"}
    static ScriptedBehavior from_stream(std::istream& in) {
        ScriptedBehavior behavior;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error& e) {
                throw Error("malformed-script",
                            "line " + std::to_string(line_no) + ": " + e.what());
            }
            detail::require_known_fields(
                j, {"stage", "candidate_id", "type", "text", "vulnerable", "safe"},
                "script line " + std::to_string(line_no));
            Stage stage = stage_from_string(j.at("stage").get<std::string>());
            std::string candidate_id = j.at("candidate_id").get<std::string>();
            std::string type = j.at("type").get<std::string>();
            if (type == "completion") {
                behavior.push(stage, candidate_id,
                              scripted_completion(j.at("text").get<std::string>()));
            } else if (type == "loglik") {
                behavior.push(stage, candidate_id,
                              scripted_loglik(j.at("vulnerable").get<double>(),
                                              j.at("safe").get<double>()));
            } else if (type == "transport-fail") {
                behavior.push(stage, candidate_id, scripted_transport_fail());
            } else {
                throw Error("malformed-script",
                            "line " + std::to_string(line_no) + ": unknown type '" + type + "'");
            }
        }
        return behavior;
    }

    static ScriptedBehavior from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("io-error", "cannot read script file '" + path + "'");
        return from_stream(in);
    }

private:
    std::map<Key, std::deque<ScriptEntry>> queues_;
};

class ScriptedProvider : public Provider {
public:
    struct RecordedCall {
        Stage stage;
        std::string candidate_id;
        PromptRequest request;
    };

    explicit ScriptedProvider(ScriptedBehavior behavior, bool supports_loglik = true)
        : behavior_(std::move(behavior)), supports_loglik_(supports_loglik) {}

    CompletionResult complete(const CallContext& ctx, const PromptRequest& request) override {
        std::lock_guard<std::mutex> lock(mu_);
        recorded_.push_back({ctx.stage, ctx.candidate_id, request});
        ScriptEntry entry = pop_front(ctx);
        if (entry.kind == ScriptEntry::Kind::TransportFail) {
            throw TransportError("scripted transport failure");
        }
        if (entry.kind != ScriptEntry::Kind::Completion) {
            throw Error("script-mismatch", "completion requested but a loglik entry is queued for " +
                                               key_label(ctx));
        }
        CompletionResult result;
        result.text = entry.text;
        for (const Message& m : request.role_messages) result.tokens.prompt += word_count(m.content);
        result.tokens.response = word_count(entry.text);
        result.wall_millis = 0;
        return result;
    }

    ScoreResult score_loglik(const CallContext& ctx, const LogLikelihoodRequest& request) override {
        std::lock_guard<std::mutex> lock(mu_);
        ScriptedBehavior::Key key{static_cast<int>(ctx.stage), ctx.candidate_id};
        auto it = behavior_.queues().find(key);
        if (it == behavior_.queues().end() || it->second.empty()) {
            throw Error("script-exhausted", "no scripted scores left for " + key_label(ctx));
        }
        ScriptEntry& front = it->second.front();
        if (front.kind == ScriptEntry::Kind::TransportFail) {
            it->second.pop_front();
            consumed_.erase(key);
            throw TransportError("scripted transport failure");
        }
        if (front.kind != ScriptEntry::Kind::LogLik) {
            throw Error("script-mismatch",
                        "loglik requested but a completion entry is queued for " + key_label(ctx));
        }
        // A scripted pair answers one vulnerable-prefix and one safe-prefix
        // query; the entry is consumed once both sides have been read.
        ScoreResult result;
        result.loglik = request.prefix_template == PrefixTemplate::Vulnerable ? front.ll_vulnerable
                                                                              : front.ll_safe;
        result.tokens.prompt = word_count(request.candidate_source) + word_count(request.reasoning);
        result.tokens.response = 0;
        result.wall_millis = 0;
        auto& state = consumed_[key];
        if (request.prefix_template == PrefixTemplate::Vulnerable) {
            state.first = true;
        } else {
            state.second = true;
        }
        if (state.first && state.second) {
            it->second.pop_front();
            consumed_.erase(key);
        }
        return result;
    }

    bool supports_loglik() const override { return supports_loglik_; }

    std::vector<RecordedCall> recorded_completions() const {
        std::lock_guard<std::mutex> lock(mu_);
        return recorded_;
    }

private:
    std::string key_label(const CallContext& ctx) const {
        return "(" + to_string(ctx.stage) + ", " + ctx.candidate_id + ")";
    }

    ScriptEntry pop_front(const CallContext& ctx) {
        ScriptedBehavior::Key key{static_cast<int>(ctx.stage), ctx.candidate_id};
        auto it = behavior_.queues().find(key);
        if (it == behavior_.queues().end() || it->second.empty()) {
            throw Error("script-exhausted", "no scripted responses left for " + key_label(ctx));
        }
        ScriptEntry entry = it->second.front();
        it->second.pop_front();
        return entry;
    }

    mutable std::mutex mu_;
    ScriptedBehavior behavior_;
    std::map<ScriptedBehavior::Key, std::pair<bool, bool>> consumed_;
    std::vector<RecordedCall> recorded_;
    bool supports_loglik_;
};

// ---------------------------------------------------------------------------
// Gateway: retry policy plus cost ledger around a provider.

struct RetryPolicy {
    int max_retries = 3;             // attempts beyond the first
    int initial_backoff_millis = 250; // doubled per retry
};

class Gateway {
public:
    explicit Gateway(Provider& provider, RetryPolicy retry = {})
        : provider_(provider), retry_(retry) {}

    CompletionResult complete(const CallContext& ctx, const PromptRequest& request) {
        if (request.role_messages.empty()) {
            throw Error("malformed-request", "prompt request must contain at least one message");
        }
        CompletionResult result = with_retries<CompletionResult>(
            [&] { return provider_.complete(ctx, request); });
        if (result.text.empty()) {
            throw Error("malformed-response", "provider returned an empty completion");
        }
        record(ctx, result.tokens, result.wall_millis);
        return result;
    }

    double score_loglik(const CallContext& ctx, const LogLikelihoodRequest& request) {
        if (!provider_.supports_loglik()) {
            throw Error("capability-missing",
                        "configured provider does not support log-likelihood scoring");
        }
        if (request.candidate_source.empty()) {
            throw Error("malformed-request", "loglik request requires a candidate source");
        }
        ScoreResult result =
            with_retries<ScoreResult>([&] { return provider_.score_loglik(ctx, request); });
        record(ctx, result.tokens, result.wall_millis);
        return result.loglik;
    }

    bool supports_loglik() const { return provider_.supports_loglik(); }

    CostLedger ledger_snapshot() const {
        std::lock_guard<std::mutex> lock(mu_);
        return ledger_;
    }

private:
    template <typename R, typename F>
    R with_retries(F&& call) {
        int backoff = retry_.initial_backoff_millis;
        std::string last_error;
        for (int attempt = 0; attempt <= retry_.max_retries; ++attempt) {
            try {
                return call();
            } catch (const TransportError& e) {
                last_error = e.what();
                if (attempt < retry_.max_retries && backoff > 0) {
                    std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
                    backoff *= 2;
                }
            }
        }
        throw Error("provider-unavailable", "transport failed after " +
                                                std::to_string(retry_.max_retries + 1) +
                                                " attempts: " + last_error);
    }

    void record(const CallContext& ctx, const TokenCounts& tokens, std::int64_t wall_millis) {
        CostEntry entry;
        entry.stage = ctx.stage;
        entry.call_count = 1;
        entry.prompt_tokens = tokens.prompt;
        entry.response_tokens = tokens.response;
        entry.wall_millis = wall_millis;
        std::lock_guard<std::mutex> lock(mu_);
        ledger_.append(entry);
        if (ctx.candidate_ledger != nullptr) ctx.candidate_ledger->append(entry);
    }

    Provider& provider_;
    RetryPolicy retry_;
    mutable std::mutex mu_;
    CostLedger ledger_;
};

} // namespace gauntlet
