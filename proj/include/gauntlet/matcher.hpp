#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "gauntlet/core.hpp"
#include "gauntlet/embedding.hpp"
#include "gauntlet/error.hpp"
#include "gauntlet/gateway.hpp"
#include "gauntlet/kb.hpp"
#include "gauntlet/templates.hpp"

// Stage 1: clone search plus a model call that confirms the similarity is a
// genuine vulnerability pattern and not a syntactic coincidence. A confirmed
// match flags the candidate and short-circuits the rest of the pipeline; the
// stage never exits a candidate as safe — that posture maximizes recall and
// leaves the cheap filter to do the pruning.

namespace gauntlet {

enum class MatchValidation { Confirmed, Rejected };

namespace detail {

// First line that is exactly "MATCH: TRUE" or "MATCH: FALSE" wins.
inline std::optional<MatchValidation> scan_match_line(const std::string& text) {
    size_t start = 0;
    while (start <= text.size()) {
        size_t nl = text.find('\n', start);
        size_t len = (nl == std::string::npos ? text.size() : nl) - start;
        std::string_view line(text.data() + start, len);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
            line.remove_suffix(1);
        }
        if (line == "MATCH: TRUE") return MatchValidation::Confirmed;
        if (line == "MATCH: FALSE") return MatchValidation::Rejected;
        if (nl == std::string::npos) break;
        start = nl + 1;
    }
    return std::nullopt;
}

struct ValidatorOutcome {
    MatchValidation result = MatchValidation::Rejected;
    std::string response_text;
    int calls_used = 0;
    bool parsed = false; // false when every attempt was non-conforming
};

inline ValidatorOutcome run_validator(const FunctionCandidate& candidate, const VulnRecord& record,
                                      Gateway& gateway, const PromptTemplates& templates,
                                      const CallContext& ctx, int max_attempts) {
    std::string cwe_list;
    for (size_t i = 0; i < record.cwe_ids.size(); ++i) {
        if (i > 0) cwe_list += ", ";
        cwe_list += record.cwe_ids[i];
    }
    std::string prompt = render_template(templates.validator, {{"candidate_code", candidate.source},
                                                               {"kb_code", record.vulnerable_code},
                                                               {"description", record.description},
                                                               {"cwe_ids", cwe_list}});
    PromptRequest request;
    request.role_messages = {{"user", prompt}};

    ValidatorOutcome outcome;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        CompletionResult result = gateway.complete(ctx, request);
        ++outcome.calls_used;
        outcome.response_text = result.text;
        if (std::optional<MatchValidation> parsed = scan_match_line(result.text)) {
            outcome.result = *parsed;
            outcome.parsed = true;
            return outcome;
        }
    }
    return outcome;
}

} // namespace detail

// One completion containing both code bodies plus the record's description
// and CWE tags; re-asks once when the response has no conforming line.
inline MatchValidation validate_match(const FunctionCandidate& candidate, const VulnRecord& record,
                                      Gateway& gateway,
                                      const PromptTemplates& templates = PromptTemplates::defaults(),
                                      CostLedger* candidate_ledger = nullptr) {
    CallContext ctx{Stage::Matcher, candidate.id, candidate_ledger};
    detail::ValidatorOutcome outcome =
        detail::run_validator(candidate, record, gateway, templates, ctx, 2);
    if (!outcome.parsed) {
        throw Error("unparseable-verdict",
                    "validator produced no MATCH line for candidate '" + candidate.id + "'");
    }
    return outcome.result;
}

inline StageDecision run_matcher(const FunctionCandidate& candidate, const KnowledgeBase& kb,
                                 const PipelineConfig& config, Gateway& gateway,
                                 const PromptTemplates& templates = PromptTemplates::defaults(),
                                 CostLedger* candidate_ledger = nullptr) {
    CallContext ctx{Stage::Matcher, candidate.id, candidate_ledger};
    std::vector<double> query = embed(candidate.source, kb.dimension);
    std::vector<MatchHit> hits = top_k_similar(query, kb, config.top_k, config.min_similarity);

    StageDecision decision;
    decision.stage = Stage::Matcher;

    std::string annotations;
    // Hard bound of top_k validator completions per candidate, re-asks
    // included: a re-ask spends budget that would have gone to a later hit.
    int budget = config.top_k;
    for (size_t i = 0; i < hits.size(); ++i) {
        if (budget <= 0) {
            annotations += "validator budget exhausted before hit " + hits[i].kb_id + "; ";
            break;
        }
        const VulnRecord* record = nullptr;
        for (const VulnRecord& r : kb.records) {
            if (r.kb_id == hits[i].kb_id) {
                record = &r;
                break;
            }
        }
        if (record == nullptr) {
            throw Error("inconsistent-input", "hit '" + hits[i].kb_id + "' not in knowledge base");
        }
        detail::ValidatorOutcome outcome = detail::run_validator(
            candidate, *record, gateway, templates, ctx, std::min(2, budget));
        budget -= outcome.calls_used;
        if (!outcome.parsed) {
            // Fail open: an unvalidated similarity must not become a flag;
            // the candidate moves on and cheaper-to-trust stages re-examine it.
            annotations += "validator unparseable for hit " + hits[i].kb_id + "; ";
            continue;
        }
        if (outcome.result == MatchValidation::Confirmed) {
            decision.outcome = Outcome::FlaggedVulnerable;
            decision.confidence = 1.0;
            decision.matched_kb_id = hits[i].kb_id;
            decision.evidence = outcome.response_text;
            if (i + 1 < hits.size()) {
                decision.evidence += "\nuntried hits:";
                for (size_t j = i + 1; j < hits.size(); ++j) {
                    decision.evidence += " " + hits[j].kb_id;
                }
            }
            return decision;
        }
    }

    decision.outcome = Outcome::PassedOn;
    decision.confidence = 0.0;
    decision.evidence = annotations.empty()
                            ? (hits.empty() ? "no hit above min_similarity"
                                            : "no hit confirmed by validator")
                            : annotations;
    return decision;
}

} // namespace gauntlet
