#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gauntlet/core.hpp"
#include "gauntlet/embedding.hpp"
#include "gauntlet/error.hpp"
#include "gauntlet/gateway.hpp"
#include "gauntlet/templates.hpp"

// Stage 4, deployment mode only: relabel deployment-time flags with manual
// precedence, cluster the confirmed false positives into recurring patterns,
// and export an adaptation dataset. The fine-tuning itself happens elsewhere;
// this module's contract ends at a well-formed dataset file.

namespace gauntlet {

enum class LabelProvenance { Manual, Llm };

inline std::string to_string(LabelProvenance p) {
    return p == LabelProvenance::Manual ? "manual" : "llm";
}

inline LabelProvenance label_provenance_from_string(std::string_view s) {
    if (s == "manual") return LabelProvenance::Manual;
    if (s == "llm") return LabelProvenance::Llm;
    throw Error("malformed-record", "unknown label provenance '" + std::string(s) + "'");
}

struct LabeledOutcome {
    std::string candidate_id;
    Verdict predicted = Verdict::Vulnerable;
    Verdict ground_truth = Verdict::Safe;
    LabelProvenance label_provenance = LabelProvenance::Llm;
    std::optional<std::string> reasoning;

    bool operator==(const LabeledOutcome&) const = default;
};

struct RelabelInput {
    FunctionCandidate candidate;
    Verdict predicted = Verdict::Vulnerable;
};

struct RelabelSkip {
    std::string candidate_id;
    std::string reason;

    bool operator==(const RelabelSkip&) const = default;
};

struct RelabelResult {
    std::vector<LabeledOutcome> outcomes;
    std::vector<RelabelSkip> skipped;
};

namespace detail {

// First line that is exactly "LABEL: VULNERABLE" or "LABEL: SAFE" wins.
inline std::optional<Verdict> scan_label_line(const std::string& text) {
    size_t start = 0;
    while (start <= text.size()) {
        size_t nl = text.find('\n', start);
        size_t len = (nl == std::string::npos ? text.size() : nl) - start;
        std::string_view line(text.data() + start, len);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
            line.remove_suffix(1);
        }
        if (line == "LABEL: VULNERABLE") return Verdict::Vulnerable;
        if (line == "LABEL: SAFE") return Verdict::Safe;
        if (nl == std::string::npos) break;
        start = nl + 1;
    }
    return std::nullopt;
}

} // namespace detail

// Manual labels win without a model call; everything else gets one completion
// (plus one re-ask) and is excluded with a skip record when the response
// never conforms — a guessed label would poison the adaptation set.
inline RelabelResult relabel(const std::vector<RelabelInput>& inputs,
                             const std::map<std::string, Verdict>& manual_labels, Gateway& gateway,
                             const PromptTemplates& templates = PromptTemplates::defaults(),
                             CostLedger* candidate_ledger = nullptr) {
    RelabelResult result;
    for (const RelabelInput& input : inputs) {
        LabeledOutcome outcome;
        outcome.candidate_id = input.candidate.id;
        outcome.predicted = input.predicted;

        auto manual = manual_labels.find(input.candidate.id);
        if (manual != manual_labels.end()) {
            outcome.ground_truth = manual->second;
            outcome.label_provenance = LabelProvenance::Manual;
            result.outcomes.push_back(std::move(outcome));
            continue;
        }

        CallContext ctx{Stage::Adapter, input.candidate.id, candidate_ledger};
        PromptRequest request;
        request.role_messages = {
            {"user", render_template(templates.relabel,
                                     {{"candidate_code", input.candidate.source}})}};
        std::optional<Verdict> label;
        std::string response;
        for (int attempt = 0; attempt < 2 && !label; ++attempt) {
            response = gateway.complete(ctx, request).text;
            label = detail::scan_label_line(response);
        }
        if (!label) {
            result.skipped.push_back(
                {input.candidate.id, "relabel response unparseable after re-ask"});
            continue;
        }
        outcome.ground_truth = *label;
        outcome.label_provenance = LabelProvenance::Llm;
        outcome.reasoning = response;
        result.outcomes.push_back(std::move(outcome));
    }
    return result;
}

struct FPPattern {
    std::string pattern_id;
    std::vector<std::string> member_candidate_ids; // sorted, nonempty
    std::vector<double> centroid;                  // unit norm
    std::optional<std::string> dominant_cwe;
    std::string summary;

    bool operator==(const FPPattern&) const = default;
};

// Single-linkage clustering with a similarity cutoff: two false positives
// land in one pattern when a chain of pairwise-similar members connects them.
inline std::vector<FPPattern> cluster_false_positives(
    const std::vector<LabeledOutcome>& false_positives,
    const std::map<std::string, std::vector<double>>& embeddings, double cluster_threshold,
    const std::map<std::string, std::vector<std::string>>& cwe_ids_by_candidate = {}) {
    if (false_positives.empty()) return {};

    size_t n = false_positives.size();
    std::vector<const std::vector<double>*> vectors(n);
    for (size_t i = 0; i < n; ++i) {
        auto it = embeddings.find(false_positives[i].candidate_id);
        if (it == embeddings.end()) {
            throw Error("inconsistent-inputs", "no embedding for false positive '" +
                                                   false_positives[i].candidate_id + "'");
        }
        vectors[i] = &it->second;
    }

    std::vector<size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<size_t(size_t)> find = [&](size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            if (cosine(*vectors[i], *vectors[j]) >= cluster_threshold) {
                parent[find(i)] = find(j);
            }
        }
    }

    std::map<size_t, std::vector<size_t>> groups;
    for (size_t i = 0; i < n; ++i) groups[find(i)].push_back(i);

    std::vector<FPPattern> patterns;
    for (auto& [root, members] : groups) {
        FPPattern pattern;
        for (size_t i : members) {
            pattern.member_candidate_ids.push_back(false_positives[i].candidate_id);
        }
        std::sort(pattern.member_candidate_ids.begin(), pattern.member_candidate_ids.end());
        pattern.pattern_id = "fp-" + pattern.member_candidate_ids.front();

        size_t dim = vectors[members.front()]->size();
        pattern.centroid.assign(dim, 0.0);
        for (size_t i : members) {
            for (size_t d = 0; d < dim; ++d) pattern.centroid[d] += (*vectors[i])[d];
        }
        double norm_sq = 0.0;
        for (double v : pattern.centroid) norm_sq += v * v;
        double norm = std::sqrt(norm_sq);
        if (norm > 0.0) {
            for (double& v : pattern.centroid) v /= norm;
        }

        std::map<std::string, int> cwe_counts;
        for (const std::string& id : pattern.member_candidate_ids) {
            auto it = cwe_ids_by_candidate.find(id);
            if (it == cwe_ids_by_candidate.end()) continue;
            for (const std::string& tag : it->second) ++cwe_counts[tag];
        }
        for (const auto& [tag, count] : cwe_counts) {
            // map order is lexicographic, so on count ties the first (and
            // smallest) tag sticks.
            if (!pattern.dominant_cwe || count > cwe_counts.at(*pattern.dominant_cwe)) {
                pattern.dominant_cwe = tag;
            }
        }

        pattern.summary = std::to_string(pattern.member_candidate_ids.size()) + " member" +
                          (pattern.member_candidate_ids.size() == 1 ? "" : "s") + "; " +
                          (pattern.dominant_cwe ? "dominant " + *pattern.dominant_cwe
                                                : "no dominant CWE");
        patterns.push_back(std::move(pattern));
    }

    std::sort(patterns.begin(), patterns.end(), [](const FPPattern& a, const FPPattern& b) {
        return a.member_candidate_ids.front() < b.member_candidate_ids.front();
    });
    return patterns;
}

struct AdaptationRecord {
    std::string candidate_id;
    std::string source;
    Verdict corrected_label = Verdict::Safe;
    std::string reasoning; // empty when the outcome carried none
    std::string pattern_id;

    bool operator==(const AdaptationRecord&) const = default;
};

struct AdaptationDataset {
    std::vector<AdaptationRecord> records; // sorted by (pattern_id, candidate_id)

    bool operator==(const AdaptationDataset&) const = default;
};

inline AdaptationDataset build_adaptation_set(const std::vector<FPPattern>& patterns,
                                              const std::vector<LabeledOutcome>& outcomes,
                                              const std::map<std::string, std::string>& sources) {
    std::map<std::string, const LabeledOutcome*> by_id;
    for (const LabeledOutcome& o : outcomes) by_id[o.candidate_id] = &o;

    std::vector<const FPPattern*> ordered;
    for (const FPPattern& p : patterns) ordered.push_back(&p);
    std::sort(ordered.begin(), ordered.end(), [](const FPPattern* a, const FPPattern* b) {
        return a->pattern_id < b->pattern_id;
    });

    AdaptationDataset dataset;
    std::set<std::string> emitted; // a duplicate member stays with the
                                   // lexicographically smaller pattern_id
    for (const FPPattern* pattern : ordered) {
        for (const std::string& id : pattern->member_candidate_ids) {
            if (!emitted.insert(id).second) continue;
            auto outcome = by_id.find(id);
            if (outcome == by_id.end()) {
                throw Error("inconsistent-inputs",
                            "pattern member '" + id + "' has no labeled outcome");
            }
            auto source = sources.find(id);
            if (source == sources.end()) {
                throw Error("inconsistent-inputs",
                            "pattern member '" + id + "' has no candidate source");
            }
            AdaptationRecord record;
            record.candidate_id = id;
            record.source = source->second;
            record.corrected_label = outcome->second->ground_truth;
            record.reasoning = outcome->second->reasoning.value_or("");
            record.pattern_id = pattern->pattern_id;
            dataset.records.push_back(std::move(record));
        }
    }
    std::sort(dataset.records.begin(), dataset.records.end(),
              [](const AdaptationRecord& a, const AdaptationRecord& b) {
                  if (a.pattern_id != b.pattern_id) return a.pattern_id < b.pattern_id;
                  return a.candidate_id < b.candidate_id;
              });
    return dataset;
}

// ---------------------------------------------------------------------------
// Adaptation dataset file: header line then one record per line.

inline constexpr int kAdaptationFormatVersion = 1;
inline constexpr const char* kAdaptationFormatName = "gauntlet.adaptation";

inline json to_json(const AdaptationRecord& r) {
    return json{{"candidate_id", r.candidate_id},
                {"source", r.source},
                {"corrected_label", to_string(r.corrected_label)},
                {"reasoning", r.reasoning},
                {"pattern_id", r.pattern_id}};
}

inline AdaptationRecord adaptation_record_from_json(const json& j) {
    detail::require_known_fields(
        j, {"candidate_id", "source", "corrected_label", "reasoning", "pattern_id"},
        "adaptation record");
    AdaptationRecord r;
    r.candidate_id = j.at("candidate_id").get<std::string>();
    r.source = j.at("source").get<std::string>();
    r.corrected_label = verdict_from_string(j.at("corrected_label").get<std::string>());
    r.reasoning = j.at("reasoning").get<std::string>();
    r.pattern_id = j.at("pattern_id").get<std::string>();
    return r;
}

inline void write_adaptation_dataset(std::ostream& out, const AdaptationDataset& dataset) {
    out << json{{"format", kAdaptationFormatName}, {"version", kAdaptationFormatVersion}}.dump()
        << '\n';
    for (const AdaptationRecord& r : dataset.records) out << to_json(r).dump() << '\n';
}

inline AdaptationDataset read_adaptation_dataset(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) {
        throw Error("malformed-record", "adaptation dataset is missing its header");
    }
    json h = json::parse(header, nullptr, false);
    if (h.is_discarded() || h.value("format", "") != kAdaptationFormatName ||
        h.value("version", 0) != kAdaptationFormatVersion) {
        throw Error("malformed-record", "unrecognized adaptation dataset header");
    }
    AdaptationDataset dataset;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        dataset.records.push_back(adaptation_record_from_json(json::parse(line)));
    }
    return dataset;
}

} // namespace gauntlet
