#pragma once

#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gauntlet/core.hpp"
#include "gauntlet/error.hpp"
#include "gauntlet/gateway.hpp"
#include "gauntlet/templates.hpp"

// Stage 3: the mock-courtroom deliberation. A Security Researcher argues the
// code is vulnerable, the Code Author defends it, a Moderator distills the
// exchange, and a Review Board issues the verdict. The Board deliberately
// sees only the Moderator's summary plus the code — isolating the jury from
// raw argument is what makes the distillation step do real work.

namespace gauntlet {

enum class TrialRole { Researcher, Author, Moderator, Board };

inline std::string to_string(TrialRole r) {
    switch (r) {
        case TrialRole::Researcher: return "Researcher";
        case TrialRole::Author: return "Author";
        case TrialRole::Moderator: return "Moderator";
        case TrialRole::Board: return "Board";
    }
    throw Error("internal", "bad TrialRole value");
}

inline TrialRole trial_role_from_string(std::string_view s) {
    if (s == "Researcher") return TrialRole::Researcher;
    if (s == "Author") return TrialRole::Author;
    if (s == "Moderator") return TrialRole::Moderator;
    if (s == "Board") return TrialRole::Board;
    throw Error("malformed-record", "unknown trial role '" + std::string(s) + "'");
}

struct TrialTurn {
    TrialRole role = TrialRole::Researcher;
    std::string content;
    int round_index = 1;

    bool operator==(const TrialTurn&) const = default;
};

struct TrialTranscript {
    std::string candidate_id;
    std::vector<TrialTurn> turns;

    bool operator==(const TrialTranscript&) const = default;
};

struct TrialVerdict {
    Verdict decision = Verdict::Safe;
    double confidence = 1.0;
    std::vector<std::string> cwe_ids;
    std::string rationale;

    bool operator==(const TrialVerdict&) const = default;
};

namespace detail {

inline std::string trim_line(std::string_view line) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
        line.remove_suffix(1);
    }
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) {
        line.remove_prefix(1);
    }
    return std::string(line);
}

inline std::vector<std::string> verdict_lines(const std::string& text) {
    std::vector<std::string> lines;
    size_t start = 0;
    while (start <= text.size()) {
        size_t nl = text.find('\n', start);
        size_t end = nl == std::string::npos ? text.size() : nl;
        lines.emplace_back(text.substr(start, end - start));
        if (nl == std::string::npos) break;
        start = nl + 1;
    }
    return lines;
}

} // namespace detail

// Grammar: first line exactly "VERDICT: VULNERABLE" or "VERDICT: SAFE" wins;
// optional "CONFIDENCE: <real in [0,1]>" (default 1.0); optional
// "CWE: CWE-n[, ...]"; everything else becomes the rationale.
inline TrialVerdict parse_verdict(const std::string& board_text) {
    TrialVerdict verdict;
    bool have_verdict = false;
    bool have_confidence = false;
    std::string rationale;

    for (const std::string& raw : detail::verdict_lines(board_text)) {
        std::string line = detail::trim_line(raw);
        if (!have_verdict && (line == "VERDICT: VULNERABLE" || line == "VERDICT: SAFE")) {
            verdict.decision = line == "VERDICT: VULNERABLE" ? Verdict::Vulnerable : Verdict::Safe;
            have_verdict = true;
            continue;
        }
        if (!have_confidence && line.rfind("CONFIDENCE:", 0) == 0) {
            std::string value = detail::trim_line(line.substr(11));
            char* end = nullptr;
            double c = std::strtod(value.c_str(), &end);
            if (value.empty() || end != value.c_str() + value.size() || !(c >= 0.0 && c <= 1.0)) {
                throw Error("malformed-confidence",
                            "confidence '" + value + "' is not a real in [0,1]");
            }
            verdict.confidence = c;
            have_confidence = true;
            continue;
        }
        if (line.rfind("CWE:", 0) == 0) {
            std::string rest = line.substr(4);
            size_t pos = 0;
            while (pos <= rest.size()) {
                size_t comma = rest.find(',', pos);
                size_t end = comma == std::string::npos ? rest.size() : comma;
                std::string tag = detail::trim_line(std::string_view(rest).substr(pos, end - pos));
                if (is_valid_cwe(tag)) verdict.cwe_ids.push_back(tag);
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
            continue;
        }
        if (!rationale.empty()) rationale += '\n';
        rationale += raw;
    }

    if (!have_verdict) {
        throw Error("no-verdict", "board output contains no VERDICT line");
    }
    verdict.rationale = rationale;
    return verdict;
}

namespace detail {

inline std::string render_transcript(const std::vector<TrialTurn>& turns) {
    std::string out;
    for (const TrialTurn& t : turns) {
        if (!out.empty()) out += "\n\n";
        out += to_string(t.role) + ":\n" + t.content;
    }
    return out;
}

} // namespace detail

inline std::pair<TrialTranscript, TrialVerdict> run_trial(
    const FunctionCandidate& candidate, const std::string& prior_evidence,
    const PipelineConfig& config, Gateway& gateway,
    const PromptTemplates& templates = PromptTemplates::defaults(),
    CostLedger* candidate_ledger = nullptr) {
    if (config.trial_rounds < 1) {
        throw Error("config-error", "inspector.trial_rounds must be >= 1");
    }
    CallContext ctx{Stage::Inspector, candidate.id, candidate_ledger};
    TrialTranscript transcript;
    transcript.candidate_id = candidate.id;

    auto speak = [&](const std::string& prompt) {
        PromptRequest request;
        request.role_messages = {{"user", prompt}};
        return gateway.complete(ctx, request).text;
    };

    for (int round = 1; round <= config.trial_rounds; ++round) {
        std::string researcher_prompt = render_template(
            templates.researcher,
            {{"candidate_code", candidate.source},
             {"prior_evidence", round == 1 ? prior_evidence : ""},
             {"transcript_so_far", detail::render_transcript(transcript.turns)}});
        transcript.turns.push_back({TrialRole::Researcher, speak(researcher_prompt), round});

        std::string author_prompt = render_template(
            templates.author,
            {{"candidate_code", candidate.source},
             {"transcript_so_far", detail::render_transcript(transcript.turns)}});
        transcript.turns.push_back({TrialRole::Author, speak(author_prompt), round});
    }

    std::string moderator_prompt = render_template(
        templates.moderator, {{"candidate_code", candidate.source},
                              {"transcript_so_far", detail::render_transcript(transcript.turns)}});
    std::string summary = speak(moderator_prompt);
    transcript.turns.push_back({TrialRole::Moderator, summary, config.trial_rounds});

    // The Board sees only the summary and the code, never the raw turns.
    std::string board_prompt = render_template(
        templates.board, {{"candidate_code", candidate.source}, {"summary", summary}});

    std::string board_text;
    TrialVerdict verdict;
    bool parsed = false;
    for (int attempt = 0; attempt < 2 && !parsed; ++attempt) {
        board_text = speak(board_prompt);
        try {
            verdict = parse_verdict(board_text);
            parsed = true;
        } catch (const Error& e) {
            if (e.code() != "no-verdict" && e.code() != "malformed-confidence") throw;
        }
    }
    if (!parsed) {
        // The trial is the decision point; unlike the matcher it cannot fail
        // open, so a twice-unparseable board is a hard error.
        throw Error("unparseable-verdict",
                    "board output unparseable after re-ask for candidate '" + candidate.id + "'");
    }
    transcript.turns.push_back({TrialRole::Board, board_text, config.trial_rounds});
    return {std::move(transcript), std::move(verdict)};
}

struct InspectorResult {
    StageDecision decision;
    TrialTranscript transcript;
    TrialVerdict verdict;
};

inline InspectorResult run_inspector(const FunctionCandidate& candidate,
                                     const std::string& prior_evidence,
                                     const PipelineConfig& config, Gateway& gateway,
                                     const PromptTemplates& templates = PromptTemplates::defaults(),
                                     CostLedger* candidate_ledger = nullptr) {
    InspectorResult result;
    auto [transcript, verdict] =
        run_trial(candidate, prior_evidence, config, gateway, templates, candidate_ledger);
    result.transcript = std::move(transcript);
    result.verdict = verdict;
    result.decision.stage = Stage::Inspector;
    result.decision.outcome = verdict.decision == Verdict::Vulnerable ? Outcome::FlaggedVulnerable
                                                                      : Outcome::ExitSafe;
    result.decision.confidence = verdict.confidence;
    result.decision.evidence = verdict.rationale;
    return result;
}

// ---------------------------------------------------------------------------
// Transcript log: header line then one transcript object per line.

inline constexpr int kTranscriptsFormatVersion = 1;
inline constexpr const char* kTranscriptsFormatName = "gauntlet.transcripts";

inline json to_json(const TrialTranscript& t) {
    json turns = json::array();
    for (const TrialTurn& turn : t.turns) {
        turns.push_back(json{{"role", to_string(turn.role)},
                             {"content", turn.content},
                             {"round_index", turn.round_index}});
    }
    return json{{"candidate_id", t.candidate_id}, {"turns", turns}};
}

inline TrialTranscript transcript_from_json(const json& j) {
    detail::require_known_fields(j, {"candidate_id", "turns"}, "transcript");
    TrialTranscript t;
    t.candidate_id = j.at("candidate_id").get<std::string>();
    for (const json& turn : j.at("turns")) {
        detail::require_known_fields(turn, {"role", "content", "round_index"}, "transcript turn");
        t.turns.push_back({trial_role_from_string(turn.at("role").get<std::string>()),
                           turn.at("content").get<std::string>(),
                           turn.at("round_index").get<int>()});
    }
    return t;
}

} // namespace gauntlet
