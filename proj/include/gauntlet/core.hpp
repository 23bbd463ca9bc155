#pragma once

#include <cstdint>
#include <ctime>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gauntlet/error.hpp"

// Shared data vocabulary. Everything here is an immutable value after
// construction; instances are safe to copy across worker threads.

namespace gauntlet {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Enums

// Stage order is total and drives trail-order validation.
enum class Stage { Matcher = 0, Filter = 1, Inspector = 2, Adapter = 3 };

enum class Outcome { FlaggedVulnerable, PassedOn, ExitSafe };

enum class Verdict { Vulnerable, Safe };

enum class Mode { Oss, Deployment };

enum class ExtractionMethod { Brace, Indent, HunkWindow };

enum class KbOrigin { Nvd, Dataset, Custom };

inline std::string to_string(Stage s) {
    switch (s) {
        case Stage::Matcher: return "Matcher";
        case Stage::Filter: return "Filter";
        case Stage::Inspector: return "Inspector";
        case Stage::Adapter: return "Adapter";
    }
    throw Error("internal", "bad Stage value");
}

inline Stage stage_from_string(std::string_view s) {
    if (s == "Matcher") return Stage::Matcher;
    if (s == "Filter") return Stage::Filter;
    if (s == "Inspector") return Stage::Inspector;
    if (s == "Adapter") return Stage::Adapter;
    throw Error("malformed-record", "unknown stage '" + std::string(s) + "'");
}

inline std::string to_string(Outcome o) {
    switch (o) {
        case Outcome::FlaggedVulnerable: return "FlaggedVulnerable";
        case Outcome::PassedOn: return "PassedOn";
        case Outcome::ExitSafe: return "ExitSafe";
    }
    throw Error("internal", "bad Outcome value");
}

inline Outcome outcome_from_string(std::string_view s) {
    if (s == "FlaggedVulnerable") return Outcome::FlaggedVulnerable;
    if (s == "PassedOn") return Outcome::PassedOn;
    if (s == "ExitSafe") return Outcome::ExitSafe;
    throw Error("malformed-record", "unknown outcome '" + std::string(s) + "'");
}

inline std::string to_string(Verdict v) {
    return v == Verdict::Vulnerable ? "Vulnerable" : "Safe";
}

inline Verdict verdict_from_string(std::string_view s) {
    if (s == "Vulnerable") return Verdict::Vulnerable;
    if (s == "Safe") return Verdict::Safe;
    throw Error("malformed-record", "unknown verdict '" + std::string(s) + "'");
}

inline std::string to_string(Mode m) {
    return m == Mode::Oss ? "oss" : "deployment";
}

inline Mode mode_from_string(std::string_view s) {
    if (s == "oss") return Mode::Oss;
    if (s == "deployment") return Mode::Deployment;
    throw Error("malformed-record", "unknown mode '" + std::string(s) + "'");
}

inline std::string to_string(ExtractionMethod m) {
    switch (m) {
        case ExtractionMethod::Brace: return "brace";
        case ExtractionMethod::Indent: return "indent";
        case ExtractionMethod::HunkWindow: return "hunk_window";
    }
    throw Error("internal", "bad ExtractionMethod value");
}

inline ExtractionMethod extraction_method_from_string(std::string_view s) {
    if (s == "brace") return ExtractionMethod::Brace;
    if (s == "indent") return ExtractionMethod::Indent;
    if (s == "hunk_window") return ExtractionMethod::HunkWindow;
    throw Error("malformed-record", "unknown extraction_method '" + std::string(s) + "'");
}

inline std::string to_string(KbOrigin o) {
    switch (o) {
        case KbOrigin::Nvd: return "nvd";
        case KbOrigin::Dataset: return "dataset";
        case KbOrigin::Custom: return "custom";
    }
    throw Error("internal", "bad KbOrigin value");
}

inline KbOrigin kb_origin_from_string(std::string_view s) {
    if (s == "nvd") return KbOrigin::Nvd;
    if (s == "dataset") return KbOrigin::Dataset;
    if (s == "custom") return KbOrigin::Custom;
    throw Error("malformed-record", "unknown origin '" + std::string(s) + "'");
}

// "CWE-" followed by 1 to 5 digits.
inline bool is_valid_cwe(std::string_view tag) {
    if (tag.size() < 5 || tag.size() > 9) return false;
    if (tag.substr(0, 4) != "CWE-") return false;
    for (char c : tag.substr(4)) {
        if (c < '0' || c > '9') return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Timestamps: UTC, second resolution.

inline std::string format_utc(std::int64_t epoch_seconds) {
    std::time_t t = static_cast<std::time_t>(epoch_seconds);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

inline std::int64_t parse_utc(std::string_view text) {
    std::tm tm{};
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
    if (text.size() != 20 ||
        std::sscanf(std::string(text).c_str(), "%4d-%2d-%2dT%2d:%2d:%2dZ", &y, &mo, &d, &h, &mi,
                    &se) != 6) {
        throw Error("malformed-record", "bad timestamp '" + std::string(text) + "'");
    }
    tm.tm_year = y - 1900;
    tm.tm_mon = mo - 1;
    tm.tm_mday = d;
    tm.tm_hour = h;
    tm.tm_min = mi;
    tm.tm_sec = se;
    return static_cast<std::int64_t>(timegm(&tm));
}

// ---------------------------------------------------------------------------
// Domain types

// One changed function extracted from a commit; the unit flowing through the
// pipeline.
struct FunctionCandidate {
    std::string id;
    std::string repo;
    std::string file_path;
    std::string language_tag; // lowercase, extension-derived
    int start_line = 1;       // 1-based inclusive
    int end_line = 1;
    std::string source;
    std::string commit_id;
    ExtractionMethod extraction_method = ExtractionMethod::HunkWindow;

    bool operator==(const FunctionCandidate&) const = default;
};

// One known-vulnerability knowledge-base entry.
struct VulnRecord {
    std::string kb_id;
    KbOrigin origin = KbOrigin::Custom;
    std::vector<std::string> cwe_ids;
    std::string vulnerable_code;
    std::optional<std::string> fixed_code;
    std::string description;
    std::optional<std::vector<double>> embedding; // unit norm when present

    bool operator==(const VulnRecord&) const = default;
};

struct StageDecision {
    Stage stage = Stage::Matcher;
    Outcome outcome = Outcome::PassedOn;
    double confidence = 0.0; // in [0,1]
    std::string evidence;
    std::optional<std::string> matched_kb_id; // Matcher + FlaggedVulnerable only

    bool operator==(const StageDecision&) const = default;
};

struct CostEntry {
    Stage stage = Stage::Matcher;
    std::int64_t call_count = 0;
    std::int64_t prompt_tokens = 0;
    std::int64_t response_tokens = 0;
    std::int64_t wall_millis = 0;

    bool operator==(const CostEntry&) const = default;
};

// Append-only within a run; per-stage call/token/wall-time accounting.
struct CostLedger {
    std::vector<CostEntry> entries;

    void append(const CostEntry& e) { entries.push_back(e); }

    bool operator==(const CostLedger&) const = default;
};

struct StageTotals {
    std::int64_t calls = 0;
    std::int64_t prompt_tokens = 0;
    std::int64_t response_tokens = 0;
    std::int64_t wall_millis = 0;

    bool operator==(const StageTotals&) const = default;
};

// Exact per-stage sums; stages with zero calls appear with zeros.
struct LedgerReport {
    std::map<Stage, StageTotals> per_stage;

    const StageTotals& at(Stage s) const { return per_stage.at(s); }
};

inline LedgerReport ledger_report(const CostLedger& ledger) {
    LedgerReport report;
    for (Stage s : {Stage::Matcher, Stage::Filter, Stage::Inspector, Stage::Adapter}) {
        report.per_stage[s] = StageTotals{};
    }
    for (const CostEntry& e : ledger.entries) {
        StageTotals& t = report.per_stage[e.stage];
        t.calls += e.call_count;
        t.prompt_tokens += e.prompt_tokens;
        t.response_tokens += e.response_tokens;
        t.wall_millis += e.wall_millis;
    }
    return report;
}

// Per-candidate audit trail with the final verdict.
struct Finding {
    std::string candidate_id;
    std::vector<StageDecision> trail;
    Verdict final_verdict = Verdict::Safe;
    std::vector<std::string> cwe_ids;
    Mode mode = Mode::Oss;
    CostLedger cost;
    std::int64_t created_at = 0; // UTC epoch seconds

    bool operator==(const Finding&) const = default;
};

// Emitted in place of a Finding when a stage fails hard; carries the partial
// trail so a scan of thousands survives one bad candidate.
struct ErrorRecord {
    std::string candidate_id;
    std::vector<StageDecision> trail;
    Mode mode = Mode::Oss;
    CostLedger cost;
    std::int64_t created_at = 0;
    std::string code;
    std::string message;

    bool operator==(const ErrorRecord&) const = default;
};

// Logistic mapping coefficients and the decision threshold for the filter
// stage: c = 1 / (1 + exp(-(a*m + b))), flag when c >= tau.
struct CalibrationParams {
    double a = 1.0;
    double b = 0.0;
    double tau = 0.5; // in [0,1]

    bool operator==(const CalibrationParams&) const = default;
};

struct PipelineConfig {
    Mode mode = Mode::Oss;
    int top_k = 5;
    double min_similarity = 0.85;
    CalibrationParams calibration;
    int trial_rounds = 1;
    int parallelism = 1;
    std::map<std::string, std::string> provider_settings;
    int hunk_window = 10;
    int embedding_dimension = 256;
    double cluster_threshold = 0.7;
};

// ---------------------------------------------------------------------------
// Finding validation. Violations are data, not errors.

struct ValidationResult {
    bool ok = true;
    std::vector<std::string> violations;
};

inline ValidationResult validate_finding(const Finding& finding) {
    ValidationResult result;
    auto violate = [&result](const std::string& name) {
        result.ok = false;
        result.violations.push_back(name);
    };

    if (finding.trail.empty()) {
        violate("empty-trail");
        return result;
    }

    for (const StageDecision& d : finding.trail) {
        if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
            violate("confidence-out-of-range");
            break;
        }
    }
    for (const StageDecision& d : finding.trail) {
        bool allowed = d.stage == Stage::Matcher && d.outcome == Outcome::FlaggedVulnerable;
        if (d.matched_kb_id.has_value() && !allowed) {
            violate("matched-kb-id-misplaced");
            break;
        }
    }

    for (size_t i = 1; i < finding.trail.size(); ++i) {
        if (!(static_cast<int>(finding.trail[i - 1].stage) <
              static_cast<int>(finding.trail[i].stage))) {
            violate("trail-stage-order");
            break;
        }
    }

    const StageDecision& first = finding.trail.front();
    if (first.stage == Stage::Matcher && first.outcome == Outcome::FlaggedVulnerable &&
        finding.trail.size() != 1) {
        violate("matcher-flag-must-terminate");
    }
    for (size_t i = 0; i < finding.trail.size(); ++i) {
        const StageDecision& d = finding.trail[i];
        if (d.stage == Stage::Filter && d.outcome == Outcome::ExitSafe &&
            finding.trail.size() != 2) {
            violate("filter-exit-must-terminate");
        }
    }
    if (finding.mode == Mode::Oss) {
        for (const StageDecision& d : finding.trail) {
            if (d.stage == Stage::Adapter) {
                violate("oss-mode-no-adapter");
                break;
            }
        }
    }

    bool last_flagged = finding.trail.back().outcome == Outcome::FlaggedVulnerable;
    bool verdict_vulnerable = finding.final_verdict == Verdict::Vulnerable;
    if (last_flagged != verdict_vulnerable) {
        violate("verdict-trail-mismatch");
    }

    return result;
}

// ---------------------------------------------------------------------------
// Line-delimited record formats. One JSON object per line, snake_case field
// names, unknown fields rejected on read.

inline constexpr int kFindingsFormatVersion = 1;
inline constexpr const char* kFindingsFormatName = "gauntlet.findings";

namespace detail {

inline void require_known_fields(const json& object,
                                 const std::vector<std::string_view>& known,
                                 const std::string& what) {
    for (auto it = object.begin(); it != object.end(); ++it) {
        bool found = false;
        for (std::string_view k : known) {
            if (it.key() == k) {
                found = true;
                break;
            }
        }
        if (!found) {
            throw Error("malformed-record", "unknown field '" + it.key() + "' in " + what);
        }
    }
}

} // namespace detail

inline json to_json(const StageDecision& d) {
    json j{{"stage", to_string(d.stage)},
           {"outcome", to_string(d.outcome)},
           {"confidence", d.confidence},
           {"evidence", d.evidence}};
    if (d.matched_kb_id) j["matched_kb_id"] = *d.matched_kb_id;
    return j;
}

inline StageDecision stage_decision_from_json(const json& j) {
    detail::require_known_fields(
        j, {"stage", "outcome", "confidence", "evidence", "matched_kb_id"}, "stage decision");
    StageDecision d;
    d.stage = stage_from_string(j.at("stage").get<std::string>());
    d.outcome = outcome_from_string(j.at("outcome").get<std::string>());
    d.confidence = j.at("confidence").get<double>();
    d.evidence = j.at("evidence").get<std::string>();
    if (j.contains("matched_kb_id")) d.matched_kb_id = j.at("matched_kb_id").get<std::string>();
    return d;
}

inline json to_json(const CostLedger& ledger) {
    json entries = json::array();
    for (const CostEntry& e : ledger.entries) {
        entries.push_back(json{{"stage", to_string(e.stage)},
                               {"call_count", e.call_count},
                               {"prompt_tokens", e.prompt_tokens},
                               {"response_tokens", e.response_tokens},
                               {"wall_millis", e.wall_millis}});
    }
    return json{{"entries", entries}};
}

inline CostLedger cost_ledger_from_json(const json& j) {
    detail::require_known_fields(j, {"entries"}, "cost ledger");
    CostLedger ledger;
    for (const json& e : j.at("entries")) {
        detail::require_known_fields(
            e, {"stage", "call_count", "prompt_tokens", "response_tokens", "wall_millis"},
            "cost entry");
        CostEntry entry;
        entry.stage = stage_from_string(e.at("stage").get<std::string>());
        entry.call_count = e.at("call_count").get<std::int64_t>();
        entry.prompt_tokens = e.at("prompt_tokens").get<std::int64_t>();
        entry.response_tokens = e.at("response_tokens").get<std::int64_t>();
        entry.wall_millis = e.at("wall_millis").get<std::int64_t>();
        ledger.append(entry);
    }
    return ledger;
}

inline json to_json(const Finding& f) {
    json trail = json::array();
    for (const StageDecision& d : f.trail) trail.push_back(to_json(d));
    return json{{"candidate_id", f.candidate_id}, {"trail", trail},
                {"final_verdict", to_string(f.final_verdict)},
                {"cwe_ids", f.cwe_ids},
                {"mode", to_string(f.mode)},
                {"cost", to_json(f.cost)},
                {"created_at", format_utc(f.created_at)}};
}

inline Finding finding_from_json(const json& j) {
    detail::require_known_fields(
        j, {"candidate_id", "trail", "final_verdict", "cwe_ids", "mode", "cost", "created_at"},
        "finding");
    Finding f;
    f.candidate_id = j.at("candidate_id").get<std::string>();
    for (const json& d : j.at("trail")) f.trail.push_back(stage_decision_from_json(d));
    f.final_verdict = verdict_from_string(j.at("final_verdict").get<std::string>());
    f.cwe_ids = j.at("cwe_ids").get<std::vector<std::string>>();
    f.mode = mode_from_string(j.at("mode").get<std::string>());
    f.cost = cost_ledger_from_json(j.at("cost"));
    f.created_at = parse_utc(j.at("created_at").get<std::string>());
    return f;
}

inline json to_json(const ErrorRecord& r) {
    json trail = json::array();
    for (const StageDecision& d : r.trail) trail.push_back(to_json(d));
    return json{{"candidate_id", r.candidate_id}, {"trail", trail},
                {"mode", to_string(r.mode)},     {"cost", to_json(r.cost)},
                {"created_at", format_utc(r.created_at)},
                {"error", json{{"code", r.code}, {"message", r.message}}}};
}

inline ErrorRecord error_record_from_json(const json& j) {
    detail::require_known_fields(j, {"candidate_id", "trail", "mode", "cost", "created_at", "error"},
                                 "error record");
    ErrorRecord r;
    r.candidate_id = j.at("candidate_id").get<std::string>();
    for (const json& d : j.at("trail")) r.trail.push_back(stage_decision_from_json(d));
    r.mode = mode_from_string(j.at("mode").get<std::string>());
    r.cost = cost_ledger_from_json(j.at("cost"));
    r.created_at = parse_utc(j.at("created_at").get<std::string>());
    const json& e = j.at("error");
    detail::require_known_fields(e, {"code", "message"}, "error record error field");
    r.code = e.at("code").get<std::string>();
    r.message = e.at("message").get<std::string>();
    return r;
}

inline json to_json(const FunctionCandidate& c) {
    return json{{"id", c.id},
                {"repo", c.repo},
                {"file_path", c.file_path},
                {"language_tag", c.language_tag},
                {"span", json::array({c.start_line, c.end_line})},
                {"source", c.source},
                {"commit_id", c.commit_id},
                {"extraction_method", to_string(c.extraction_method)}};
}

inline FunctionCandidate candidate_from_json(const json& j) {
    detail::require_known_fields(j,
                                 {"id", "repo", "file_path", "language_tag", "span", "source",
                                  "commit_id", "extraction_method"},
                                 "candidate");
    FunctionCandidate c;
    c.id = j.at("id").get<std::string>();
    c.repo = j.at("repo").get<std::string>();
    c.file_path = j.at("file_path").get<std::string>();
    c.language_tag = j.at("language_tag").get<std::string>();
    const json& span = j.at("span");
    if (!span.is_array() || span.size() != 2) {
        throw Error("malformed-record", "candidate span must be [start_line, end_line]");
    }
    c.start_line = span[0].get<int>();
    c.end_line = span[1].get<int>();
    c.source = j.at("source").get<std::string>();
    c.commit_id = j.at("commit_id").get<std::string>();
    c.extraction_method = extraction_method_from_string(j.at("extraction_method").get<std::string>());
    return c;
}

} // namespace gauntlet
