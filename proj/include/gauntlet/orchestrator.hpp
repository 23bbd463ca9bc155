#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gauntlet/adapter.hpp"
#include "gauntlet/core.hpp"
#include "gauntlet/error.hpp"
#include "gauntlet/filter.hpp"
#include "gauntlet/gateway.hpp"
#include "gauntlet/inspector.hpp"
#include "gauntlet/kb.hpp"
#include "gauntlet/matcher.hpp"
#include "gauntlet/templates.hpp"

// Drives each candidate through Matcher -> Filter -> Inspector (-> Adapter
// recording in deployment mode) with the early-exit rules, isolates per-
// candidate failures, and persists findings deterministically. The stage
// order is the whole point: cheapest and most selective first, so the
// expensive trial only ever sees the small confident remainder.

namespace gauntlet {

using Clock = std::function<std::int64_t()>;

inline std::int64_t system_clock_now() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

struct PipelineResult {
    std::optional<Finding> finding;
    std::optional<ErrorRecord> error;
    std::optional<TrialTranscript> transcript;

    const std::string& candidate_id() const {
        return finding ? finding->candidate_id : error->candidate_id;
    }
};

inline PipelineResult run_pipeline(const FunctionCandidate& candidate, const KnowledgeBase& kb,
                                   const PipelineConfig& config, Gateway& gateway,
                                   const PromptTemplates& templates = PromptTemplates::defaults(),
                                   const Clock& now = system_clock_now) {
    PipelineResult result;
    CostLedger ledger;
    std::vector<StageDecision> trail;

    auto finish = [&](Verdict verdict, std::vector<std::string> cwe_ids) {
        Finding f;
        f.candidate_id = candidate.id;
        f.trail = trail;
        f.final_verdict = verdict;
        f.cwe_ids = std::move(cwe_ids);
        f.mode = config.mode;
        f.cost = ledger;
        f.created_at = now();
        result.finding = std::move(f);
    };

    try {
        StageDecision matcher_decision =
            run_matcher(candidate, kb, config, gateway, templates, &ledger);
        trail.push_back(matcher_decision);
        if (matcher_decision.outcome == Outcome::FlaggedVulnerable) {
            std::vector<std::string> cwe_ids;
            for (const VulnRecord& r : kb.records) {
                if (r.kb_id == *matcher_decision.matched_kb_id) {
                    cwe_ids = r.cwe_ids;
                    break;
                }
            }
            finish(Verdict::Vulnerable, std::move(cwe_ids));
            return result;
        }

        StageDecision filter_decision = run_filter(candidate, config, gateway, &ledger);
        trail.push_back(filter_decision);
        if (filter_decision.outcome == Outcome::ExitSafe) {
            finish(Verdict::Safe, {});
            return result;
        }

        std::string prior_evidence = "matcher: " + trail[0].evidence + "\nfilter: " +
                                     trail[1].evidence;
        InspectorResult inspector =
            run_inspector(candidate, prior_evidence, config, gateway, templates, &ledger);
        trail.push_back(inspector.decision);
        result.transcript = std::move(inspector.transcript);

        if (inspector.decision.outcome == Outcome::ExitSafe) {
            finish(Verdict::Safe, inspector.verdict.cwe_ids);
            return result;
        }
        if (config.mode == Mode::Deployment) {
            StageDecision adapter_decision;
            adapter_decision.stage = Stage::Adapter;
            adapter_decision.outcome = Outcome::FlaggedVulnerable;
            adapter_decision.confidence = 1.0;
            adapter_decision.evidence = "recorded for adaptation";
            trail.push_back(adapter_decision);
        }
        finish(Verdict::Vulnerable, inspector.verdict.cwe_ids);
        return result;
    } catch (const Error& e) {
        ErrorRecord record;
        record.candidate_id = candidate.id;
        record.trail = trail;
        record.mode = config.mode;
        record.cost = ledger;
        record.created_at = now();
        record.code = e.code();
        record.message = e.what();
        result.error = std::move(record);
        return result;
    }
}

// ---------------------------------------------------------------------------
// Findings persistence: header line, then one record per line sorted by
// candidate id. Error records live in the same file, distinguished by their
// "error" field, so every candidate appears exactly once.

struct FindingsFile {
    std::vector<Finding> findings;
    std::vector<ErrorRecord> errors;
};

inline void write_findings(std::ostream& out, const std::vector<Finding>& findings,
                           const std::vector<ErrorRecord>& errors) {
    out << json{{"format", kFindingsFormatName}, {"version", kFindingsFormatVersion}}.dump()
        << '\n';
    size_t fi = 0;
    size_t ei = 0;
    while (fi < findings.size() || ei < errors.size()) {
        bool take_finding =
            ei >= errors.size() ||
            (fi < findings.size() && findings[fi].candidate_id <= errors[ei].candidate_id);
        if (take_finding) {
            out << to_json(findings[fi++]).dump() << '\n';
        } else {
            out << to_json(errors[ei++]).dump() << '\n';
        }
    }
}

inline FindingsFile read_findings(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) {
        throw Error("malformed-record", "findings file is missing its header");
    }
    json h = json::parse(header, nullptr, false);
    if (h.is_discarded() || h.value("format", "") != kFindingsFormatName ||
        h.value("version", 0) != kFindingsFormatVersion) {
        throw Error("malformed-record", "unrecognized findings header");
    }
    FindingsFile file;
    std::string line;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error("malformed-record",
                        "findings line " + std::to_string(line_no) + ": " + e.what());
        }
        if (j.contains("error")) {
            file.errors.push_back(error_record_from_json(j));
        } else {
            file.findings.push_back(finding_from_json(j));
        }
    }
    return file;
}

inline FindingsFile load_findings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io-error", "cannot read findings '" + path + "'");
    return read_findings(in);
}

inline void write_transcripts(std::ostream& out, const std::vector<TrialTranscript>& transcripts) {
    out << json{{"format", kTranscriptsFormatName}, {"version", kTranscriptsFormatVersion}}.dump()
        << '\n';
    for (const TrialTranscript& t : transcripts) out << to_json(t).dump() << '\n';
}

inline std::vector<TrialTranscript> read_transcripts(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) {
        throw Error("malformed-record", "transcript file is missing its header");
    }
    json h = json::parse(header, nullptr, false);
    if (h.is_discarded() || h.value("format", "") != kTranscriptsFormatName ||
        h.value("version", 0) != kTranscriptsFormatVersion) {
        throw Error("malformed-record", "unrecognized transcript header");
    }
    std::vector<TrialTranscript> transcripts;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        transcripts.push_back(transcript_from_json(json::parse(line)));
    }
    return transcripts;
}

// ---------------------------------------------------------------------------
// Candidate snapshot: what the scan extracted, persisted so the adapt command
// can join findings back to their sources later.

inline constexpr int kCandidatesFormatVersion = 1;
inline constexpr const char* kCandidatesFormatName = "gauntlet.candidates";

inline void write_candidates(std::ostream& out, std::vector<FunctionCandidate> candidates) {
    std::sort(candidates.begin(), candidates.end(),
              [](const FunctionCandidate& a, const FunctionCandidate& b) { return a.id < b.id; });
    out << json{{"format", kCandidatesFormatName}, {"version", kCandidatesFormatVersion}}.dump()
        << '\n';
    for (const FunctionCandidate& c : candidates) out << to_json(c).dump() << '\n';
}

inline std::vector<FunctionCandidate> read_candidates(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) {
        throw Error("malformed-record", "candidates file is missing its header");
    }
    json h = json::parse(header, nullptr, false);
    if (h.is_discarded() || h.value("format", "") != kCandidatesFormatName ||
        h.value("version", 0) != kCandidatesFormatVersion) {
        throw Error("malformed-record", "unrecognized candidates header");
    }
    std::vector<FunctionCandidate> candidates;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        candidates.push_back(candidate_from_json(json::parse(line)));
    }
    return candidates;
}

inline std::vector<FunctionCandidate> load_candidates(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io-error", "cannot read candidates '" + path + "'");
    return read_candidates(in);
}

// ---------------------------------------------------------------------------
// Scan runs

struct ScanPaths {
    std::string findings;    // empty -> keep in memory only
    std::string transcripts; // empty -> keep in memory only
    std::string run;         // run metadata JSON; empty -> skip
};

struct ScanRun {
    std::string run_id;
    Mode mode = Mode::Oss;
    int trial_rounds = 1;
    int candidate_count = 0;
    std::string findings_path;
    std::string transcripts_path;
    std::int64_t started_at = 0;
    std::optional<std::int64_t> finished_at;
    std::vector<Finding> findings;        // sorted by candidate id
    std::vector<ErrorRecord> errors;      // sorted by candidate id
    std::vector<TrialTranscript> transcripts;
    CostLedger aggregate;
};

inline json to_json(const ScanRun& run) {
    return json{{"format", "gauntlet.run"},
                {"version", 1},
                {"run_id", run.run_id},
                {"mode", to_string(run.mode)},
                {"trial_rounds", run.trial_rounds},
                {"candidate_count", run.candidate_count},
                {"findings", run.findings_path},
                {"transcripts", run.transcripts_path},
                {"started_at", format_utc(run.started_at)},
                {"finished_at",
                 run.finished_at ? json(format_utc(*run.finished_at)) : json(nullptr)}};
}

inline ScanRun scan_run_from_json(const json& j) {
    detail::require_known_fields(j,
                                 {"format", "version", "run_id", "mode", "trial_rounds",
                                  "candidate_count", "findings", "transcripts", "started_at",
                                  "finished_at"},
                                 "run metadata");
    if (j.value("format", "") != "gauntlet.run" || j.value("version", 0) != 1) {
        throw Error("malformed-record", "unrecognized run metadata header");
    }
    ScanRun run;
    run.run_id = j.at("run_id").get<std::string>();
    run.mode = mode_from_string(j.at("mode").get<std::string>());
    run.trial_rounds = j.at("trial_rounds").get<int>();
    run.candidate_count = j.at("candidate_count").get<int>();
    run.findings_path = j.at("findings").get<std::string>();
    run.transcripts_path = j.at("transcripts").get<std::string>();
    run.started_at = parse_utc(j.at("started_at").get<std::string>());
    if (!j.at("finished_at").is_null()) {
        run.finished_at = parse_utc(j.at("finished_at").get<std::string>());
    }
    return run;
}

inline void save_run_metadata(const std::string& path, const ScanRun& run) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io-error", "cannot write run metadata '" + path + "'");
    out << to_json(run).dump(2) << '\n';
}

inline ScanRun load_run_metadata(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io-error", "cannot read run metadata '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error("malformed-record", std::string("run metadata: ") + e.what());
    }
    return scan_run_from_json(j);
}

inline ScanRun run_scan(const std::vector<FunctionCandidate>& candidates, KnowledgeBase& kb,
                        const PipelineConfig& config, Gateway& gateway,
                        const PromptTemplates& templates = PromptTemplates::defaults(),
                        const ScanPaths& paths = {}, const Clock& now = system_clock_now) {
    {
        std::set<std::string> ids;
        for (const FunctionCandidate& c : candidates) {
            if (!ids.insert(c.id).second) {
                throw Error("duplicate-record", "candidate id '" + c.id + "' appears twice");
            }
        }
    }
    materialize_embeddings(kb);

    ScanRun run;
    run.mode = config.mode;
    run.trial_rounds = config.trial_rounds;
    run.candidate_count = static_cast<int>(candidates.size());
    run.findings_path = paths.findings;
    run.transcripts_path = paths.transcripts;
    run.started_at = now();
    run.run_id = "run-" + std::to_string(run.started_at);
    if (!paths.run.empty()) save_run_metadata(paths.run, run); // finished_at still null

    std::vector<PipelineResult> results(candidates.size());
    int workers = std::max(1, std::min<int>(config.parallelism,
                                            static_cast<int>(candidates.size())));
    if (workers <= 1) {
        for (size_t i = 0; i < candidates.size(); ++i) {
            results[i] = run_pipeline(candidates[i], kb, config, gateway, templates, now);
        }
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < candidates.size(); i = next.fetch_add(1)) {
                    results[i] = run_pipeline(candidates[i], kb, config, gateway, templates, now);
                }
            });
        }
        for (std::thread& t : pool) t.join();
    }

    for (PipelineResult& r : results) {
        if (r.finding) run.findings.push_back(std::move(*r.finding));
        if (r.error) run.errors.push_back(std::move(*r.error));
        if (r.transcript) run.transcripts.push_back(std::move(*r.transcript));
    }
    auto by_id = [](const auto& a, const auto& b) { return a.candidate_id < b.candidate_id; };
    std::sort(run.findings.begin(), run.findings.end(), by_id);
    std::sort(run.errors.begin(), run.errors.end(), by_id);
    std::sort(run.transcripts.begin(), run.transcripts.end(), by_id);

    run.finished_at = now();
    run.aggregate = gateway.ledger_snapshot();

    if (!paths.findings.empty()) {
        std::ofstream out(paths.findings, std::ios::binary);
        if (!out) throw Error("io-error", "cannot write findings '" + paths.findings + "'");
        write_findings(out, run.findings, run.errors);
    }
    if (!paths.transcripts.empty()) {
        std::ofstream out(paths.transcripts, std::ios::binary);
        if (!out) throw Error("io-error", "cannot write transcripts '" + paths.transcripts + "'");
        write_transcripts(out, run.transcripts);
    }
    if (!paths.run.empty()) save_run_metadata(paths.run, run);
    return run;
}

// ---------------------------------------------------------------------------
// Cost-ordering analysis

struct CostReport {
    std::map<Stage, std::int64_t> stage_invocations; // candidates that entered the stage
    bool funnel_monotone = true;
    std::int64_t matcher_passed = 0;
    std::int64_t inspector_actual_calls = 0;
    // What the Inspector would have cost had it run on every matcher-passed
    // candidate — the rejected design with the trial in front of the filter.
    std::int64_t counterfactual_inspector_calls = 0;
};

inline CostReport cost_report(const ScanRun& run) {
    if (!run.finished_at) {
        throw Error("run-not-finished", "cost report requires a completed run");
    }
    CostReport report;
    for (Stage s : {Stage::Matcher, Stage::Filter, Stage::Inspector, Stage::Adapter}) {
        report.stage_invocations[s] = 0;
    }

    auto tally = [&](const std::vector<StageDecision>& trail, const CostLedger& cost) {
        for (const StageDecision& d : trail) {
            ++report.stage_invocations[d.stage];
            if (d.stage == Stage::Matcher && d.outcome == Outcome::PassedOn) {
                ++report.matcher_passed;
            }
        }
        for (const CostEntry& e : cost.entries) {
            if (e.stage == Stage::Inspector) report.inspector_actual_calls += e.call_count;
        }
    };
    for (const Finding& f : run.findings) tally(f.trail, f.cost);
    for (const ErrorRecord& e : run.errors) tally(e.trail, e.cost);

    const auto& inv = report.stage_invocations;
    report.funnel_monotone = inv.at(Stage::Matcher) >= inv.at(Stage::Filter) &&
                             inv.at(Stage::Filter) >= inv.at(Stage::Inspector) &&
                             inv.at(Stage::Inspector) >= inv.at(Stage::Adapter);
    report.counterfactual_inspector_calls =
        report.matcher_passed * (2 * static_cast<std::int64_t>(run.trial_rounds) + 2);
    return report;
}

inline std::string render_cost_report(const CostReport& report) {
    std::ostringstream out;
    out << "stage invocations:\n";
    for (Stage s : {Stage::Matcher, Stage::Filter, Stage::Inspector, Stage::Adapter}) {
        out << "  " << to_string(s) << " " << report.stage_invocations.at(s) << "\n";
    }
    out << "funnel monotone: " << (report.funnel_monotone ? "yes" : "no") << "\n";
    out << "matcher passed on: " << report.matcher_passed << "\n";
    out << "inspector completion calls: " << report.inspector_actual_calls << "\n";
    out << "counterfactual inspector-first calls: " << report.counterfactual_inspector_calls
        << "\n";
    return out.str();
}

} // namespace gauntlet
