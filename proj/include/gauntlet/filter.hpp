#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "gauntlet/core.hpp"
#include "gauntlet/error.hpp"
#include "gauntlet/gateway.hpp"

// Stage 2: scores the candidate under the vulnerable and safe template
// prefixes, maps the log-odds margin through a calibrated logistic to a
// confidence, and thresholds. A safe-side decision terminates the pipeline
// for the candidate; only confident candidates earn the expensive trial.

namespace gauntlet {

struct MarginSample {
    std::string candidate_id;
    double margin = 0.0;
    std::optional<Verdict> label; // present only in calibration datasets

    bool operator==(const MarginSample&) const = default;
};

// m = loglik(reasoning | vulnerable prefix) - loglik(reasoning | safe prefix).
// The reasoning slot is the candidate source itself: a fixed, deterministic
// stand-in that keeps the two scoring calls symmetric.
inline double reasoning_margin(const FunctionCandidate& candidate, Gateway& gateway,
                               CostLedger* candidate_ledger = nullptr) {
    CallContext ctx{Stage::Filter, candidate.id, candidate_ledger};
    LogLikelihoodRequest request;
    request.candidate_source = candidate.source;
    request.reasoning = candidate.source;
    request.prefix_template = PrefixTemplate::Vulnerable;
    double vulnerable = gateway.score_loglik(ctx, request);
    request.prefix_template = PrefixTemplate::Safe;
    double safe = gateway.score_loglik(ctx, request);
    return vulnerable - safe;
}

inline double confidence(double m, const CalibrationParams& calib) {
    return 1.0 / (1.0 + std::exp(-(calib.a * m + calib.b)));
}

// Flagging is inclusive (c >= tau), except at the clamped sentinel tau = 1
// where it turns strict so a calibration that found no acceptable threshold
// flags nothing even when the logistic saturates to exactly 1.
inline bool flag_decision(double c, double tau) {
    return tau >= 1.0 ? c > tau : c >= tau;
}

inline StageDecision run_filter(const FunctionCandidate& candidate, const PipelineConfig& config,
                                Gateway& gateway, CostLedger* candidate_ledger = nullptr) {
    double m = reasoning_margin(candidate, gateway, candidate_ledger);
    double c = confidence(m, config.calibration);

    StageDecision decision;
    decision.stage = Stage::Filter;
    decision.confidence = c;
    char evidence[64];
    std::snprintf(evidence, sizeof(evidence), "margin=%.6f", m);
    decision.evidence = evidence;
    decision.outcome = flag_decision(c, config.calibration.tau) ? Outcome::FlaggedVulnerable
                                                                : Outcome::ExitSafe;
    return decision;
}

inline CalibrationParams calibrate(const std::vector<MarginSample>& samples, double target_fpr) {
    if (!(target_fpr > 0.0 && target_fpr < 1.0)) {
        throw Error("config-error", "target_fpr must be strictly between 0 and 1");
    }
    std::vector<double> margins;
    std::vector<int> labels; // 1 = vulnerable
    int positives = 0;
    for (const MarginSample& s : samples) {
        if (!s.label) {
            throw Error("insufficient-labels",
                        "calibration sample '" + s.candidate_id + "' has no label");
        }
        margins.push_back(s.margin);
        labels.push_back(*s.label == Verdict::Vulnerable ? 1 : 0);
        positives += labels.back();
    }
    int n = static_cast<int>(margins.size());
    if (positives == 0 || positives == n) {
        throw Error("insufficient-labels", "calibration requires at least one of each label");
    }

    // Full-batch gradient ascent on the mean log-likelihood. Fixed
    // initialization, rate, and iteration count: determinism outranks fit
    // quality at this scale.
    double a = 1.0;
    double b = 0.0;
    const double lr = 0.1;
    for (int iter = 0; iter < 500; ++iter) {
        double grad_a = 0.0;
        double grad_b = 0.0;
        for (int i = 0; i < n; ++i) {
            double p = 1.0 / (1.0 + std::exp(-(a * margins[i] + b)));
            double residual = labels[i] - p;
            grad_a += residual * margins[i];
            grad_b += residual;
        }
        a += lr * grad_a / n;
        b += lr * grad_b / n;
    }

    CalibrationParams params{a, b, 1.0};

    std::vector<double> confidences;
    confidences.reserve(margins.size());
    for (double m : margins) confidences.push_back(confidence(m, params));

    std::vector<double> distinct = confidences;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    // Candidate thresholds: every midpoint between consecutive distinct
    // confidences, plus the flag-nothing sentinel tau = 1.
    std::vector<double> taus;
    for (size_t i = 1; i < distinct.size(); ++i) {
        taus.push_back((distinct[i - 1] + distinct[i]) / 2.0);
    }
    taus.push_back(1.0);

    double best_tau = 1.0;
    double best_recall = -1.0;
    for (double tau : taus) {
        std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
        for (int i = 0; i < n; ++i) {
            bool flagged = flag_decision(confidences[i], tau);
            if (labels[i] == 1) {
                flagged ? ++tp : ++fn;
            } else {
                flagged ? ++fp : ++tn;
            }
        }
        double fpr = fp + tn == 0 ? 0.0 : static_cast<double>(fp) / (fp + tn);
        double recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
        if (fpr <= target_fpr &&
            (recall > best_recall || (recall == best_recall && tau > best_tau))) {
            best_recall = recall;
            best_tau = tau;
        }
    }
    params.tau = best_tau;
    return params;
}

// ---------------------------------------------------------------------------
// Calibration dataset format: one {"candidate_id","margin","label"} object
// per line, label lowercase "vulnerable" | "safe" (optional).

inline json to_json(const MarginSample& s) {
    json j{{"candidate_id", s.candidate_id}, {"margin", s.margin}};
    if (s.label) j["label"] = *s.label == Verdict::Vulnerable ? "vulnerable" : "safe";
    return j;
}

inline MarginSample margin_sample_from_json(const json& j) {
    detail::require_known_fields(j, {"candidate_id", "margin", "label"}, "margin sample");
    MarginSample s;
    s.candidate_id = j.at("candidate_id").get<std::string>();
    s.margin = j.at("margin").get<double>();
    if (j.contains("label")) {
        std::string label = j.at("label").get<std::string>();
        if (label == "vulnerable") {
            s.label = Verdict::Vulnerable;
        } else if (label == "safe") {
            s.label = Verdict::Safe;
        } else {
            throw Error("malformed-record", "unknown margin label '" + label + "'");
        }
    }
    return s;
}

inline std::vector<MarginSample> read_margin_samples(std::istream& in) {
    std::vector<MarginSample> samples;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            samples.push_back(margin_sample_from_json(json::parse(line)));
        } catch (const json::parse_error& e) {
            throw Error("malformed-record",
                        "margin sample line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return samples;
}

inline std::vector<MarginSample> load_margin_samples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io-error", "cannot read margin samples '" + path + "'");
    return read_margin_samples(in);
}

} // namespace gauntlet
