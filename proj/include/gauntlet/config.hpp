#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gauntlet/core.hpp"
#include "gauntlet/error.hpp"
#include "gauntlet/gateway.hpp"
#include "gauntlet/http_provider.hpp"
#include "gauntlet/templates.hpp"

// Flat dotted-key configuration: one "key = value" per line, '#' comments,
// schema-validated. Minimal and diffable; calibrate writes its fitted
// parameters back into the same file without disturbing anything else.

namespace gauntlet {

struct ConfigData {
    PipelineConfig pipeline;
    std::string provider_kind = "scripted"; // scripted | http
    std::string provider_script;            // scripted: path to the behavior file
    HttpProviderConfig http;
    RetryPolicy retry;
    std::map<std::string, std::string> template_paths; // role -> file
    std::map<std::string, std::string> raw;
};

namespace detail {

inline const std::set<std::string>& known_config_keys() {
    static const std::set<std::string> keys{
        "mode",
        "matcher.top_k",
        "matcher.min_similarity",
        "filter.a",
        "filter.b",
        "filter.tau",
        "inspector.trial_rounds",
        "adapter.cluster_threshold",
        "scan.parallelism",
        "scan.hunk_window",
        "embedding.dimension",
        "provider.kind",
        "provider.script",
        "provider.endpoint",
        "provider.model",
        "provider.api_key_env",
        "provider.supports_loglik",
        "provider.timeout_seconds",
        "retry.max_retries",
        "retry.initial_backoff_millis",
        "templates.validator",
        "templates.researcher",
        "templates.author",
        "templates.moderator",
        "templates.board",
        "templates.relabel",
    };
    return keys;
}

inline std::string trim(std::string_view s) {
    size_t begin = s.find_first_not_of(" \t\r");
    if (begin == std::string_view::npos) return "";
    size_t end = s.find_last_not_of(" \t\r");
    return std::string(s.substr(begin, end - begin + 1));
}

inline int config_int(const std::string& key, const std::string& value, int min_value) {
    char* end = nullptr;
    long v = std::strtol(value.c_str(), &end, 10);
    if (value.empty() || end != value.c_str() + value.size()) {
        throw Error("config-error", key + " = '" + value + "' is not an integer");
    }
    if (v < min_value) {
        throw Error("config-error", key + " must be >= " + std::to_string(min_value));
    }
    return static_cast<int>(v);
}

inline double config_double(const std::string& key, const std::string& value) {
    char* end = nullptr;
    double v = std::strtod(value.c_str(), &end);
    if (value.empty() || end != value.c_str() + value.size()) {
        throw Error("config-error", key + " = '" + value + "' is not a number");
    }
    return v;
}

inline double config_unit(const std::string& key, const std::string& value) {
    double v = config_double(key, value);
    if (!(v >= 0.0 && v <= 1.0)) {
        throw Error("config-error", key + " must be in [0,1]");
    }
    return v;
}

inline bool config_bool(const std::string& key, const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    throw Error("config-error", key + " must be 'true' or 'false'");
}

} // namespace detail

inline ConfigData parse_config_text(const std::string& text) {
    ConfigData config;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string stripped = detail::trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw Error("config-error",
                        "line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        std::string key = detail::trim(stripped.substr(0, eq));
        std::string value = detail::trim(stripped.substr(eq + 1));
        if (detail::known_config_keys().count(key) == 0) {
            throw Error("unknown-config-key",
                        "'" + key + "' on line " + std::to_string(line_no));
        }
        if (!config.raw.emplace(key, value).second) {
            throw Error("config-error",
                        "duplicate key '" + key + "' on line " + std::to_string(line_no));
        }
    }

    for (const auto& [key, value] : config.raw) {
        if (key == "mode") {
            if (value != "oss" && value != "deployment") {
                throw Error("config-error", "mode must be 'oss' or 'deployment'");
            }
            config.pipeline.mode = mode_from_string(value);
        } else if (key == "matcher.top_k") {
            config.pipeline.top_k = detail::config_int(key, value, 1);
        } else if (key == "matcher.min_similarity") {
            config.pipeline.min_similarity = detail::config_unit(key, value);
        } else if (key == "filter.a") {
            config.pipeline.calibration.a = detail::config_double(key, value);
        } else if (key == "filter.b") {
            config.pipeline.calibration.b = detail::config_double(key, value);
        } else if (key == "filter.tau") {
            config.pipeline.calibration.tau = detail::config_unit(key, value);
        } else if (key == "inspector.trial_rounds") {
            config.pipeline.trial_rounds = detail::config_int(key, value, 1);
        } else if (key == "adapter.cluster_threshold") {
            config.pipeline.cluster_threshold = detail::config_unit(key, value);
        } else if (key == "scan.parallelism") {
            config.pipeline.parallelism = detail::config_int(key, value, 1);
        } else if (key == "scan.hunk_window") {
            config.pipeline.hunk_window = detail::config_int(key, value, 1);
        } else if (key == "embedding.dimension") {
            config.pipeline.embedding_dimension = detail::config_int(key, value, 1);
        } else if (key == "provider.kind") {
            if (value != "scripted" && value != "http") {
                throw Error("config-error", "provider.kind must be 'scripted' or 'http'");
            }
            config.provider_kind = value;
        } else if (key == "provider.script") {
            config.provider_script = value;
        } else if (key == "provider.endpoint") {
            config.http.endpoint = value;
        } else if (key == "provider.model") {
            config.http.model = value;
        } else if (key == "provider.api_key_env") {
            config.http.api_key_env = value;
        } else if (key == "provider.supports_loglik") {
            config.http.supports_loglik = detail::config_bool(key, value);
        } else if (key == "provider.timeout_seconds") {
            config.http.timeout_seconds = detail::config_int(key, value, 1);
        } else if (key == "retry.max_retries") {
            config.retry.max_retries = detail::config_int(key, value, 0);
        } else if (key == "retry.initial_backoff_millis") {
            config.retry.initial_backoff_millis = detail::config_int(key, value, 0);
        } else if (key.rfind("templates.", 0) == 0) {
            config.template_paths[key.substr(10)] = value;
        }
        if (key.rfind("provider.", 0) == 0) {
            config.pipeline.provider_settings[key] = value;
        }
    }
    return config;
}

inline ConfigData load_config(const std::string& path) {
    return parse_config_text(read_text_file(path));
}

// In-place update preserving comments, blank lines, and key order; keys not
// already present are appended.
inline void update_config_values(const std::string& path,
                                 const std::map<std::string, std::string>& updates) {
    std::string text = read_text_file(path);
    std::istringstream in(text);
    std::vector<std::string> lines;
    std::string line;
    std::set<std::string> pending;
    for (const auto& [key, value] : updates) {
        if (detail::known_config_keys().count(key) == 0) {
            throw Error("unknown-config-key", "'" + key + "'");
        }
        pending.insert(key);
    }
    while (std::getline(in, line)) {
        std::string stripped = detail::trim(line);
        if (!stripped.empty() && stripped[0] != '#') {
            size_t eq = stripped.find('=');
            if (eq != std::string::npos) {
                std::string key = detail::trim(stripped.substr(0, eq));
                auto it = updates.find(key);
                if (it != updates.end()) {
                    lines.push_back(key + " = " + it->second);
                    pending.erase(key);
                    continue;
                }
            }
        }
        lines.push_back(line);
    }
    for (const std::string& key : pending) {
        lines.push_back(key + " = " + updates.at(key));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io-error", "cannot write config '" + path + "'");
    for (const std::string& l : lines) out << l << '\n';
}

inline std::unique_ptr<Provider> make_provider(const ConfigData& config) {
    if (config.provider_kind == "http") {
        return std::make_unique<HttpProvider>(config.http);
    }
    ScriptedBehavior behavior;
    if (!config.provider_script.empty()) {
        behavior = ScriptedBehavior::from_file(config.provider_script);
    }
    return std::make_unique<ScriptedProvider>(std::move(behavior));
}

inline PromptTemplates load_templates(const ConfigData& config) {
    PromptTemplates t = PromptTemplates::defaults();
    for (const auto& [role, path] : config.template_paths) {
        std::string text = read_text_file(path);
        if (role == "validator") {
            t.validator = text;
        } else if (role == "researcher") {
            t.researcher = text;
        } else if (role == "author") {
            t.author = text;
        } else if (role == "moderator") {
            t.moderator = text;
        } else if (role == "board") {
            t.board = text;
        } else if (role == "relabel") {
            t.relabel = text;
        }
    }
    return t;
}

} // namespace gauntlet
