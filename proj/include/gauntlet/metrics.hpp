#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "gauntlet/core.hpp"
#include "gauntlet/error.hpp"
#include "gauntlet/filter.hpp"

// Metrics harness. The headline metric is F0.3 — beta < 1 weights precision
// over recall, matching an operational setting where a false flag costs more
// reviewer time than a miss costs coverage — but F1 is always reported next
// to it so the emphasis stays visible.

namespace gauntlet {

inline constexpr double kHeadlineBeta = 0.3;

struct ConfusionMatrix {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;

    bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(const std::vector<Finding>& findings,
                                 const std::map<std::string, Verdict>& ground_truth) {
    std::string missing;
    for (const Finding& f : findings) {
        if (ground_truth.find(f.candidate_id) == ground_truth.end()) {
            if (!missing.empty()) missing += ", ";
            missing += f.candidate_id;
        }
    }
    if (!missing.empty()) {
        throw Error("incomplete-labels", "no ground-truth label for: " + missing);
    }
    ConfusionMatrix cm;
    for (const Finding& f : findings) {
        bool predicted = f.final_verdict == Verdict::Vulnerable;
        bool actual = ground_truth.at(f.candidate_id) == Verdict::Vulnerable;
        if (predicted && actual) ++cm.tp;
        if (predicted && !actual) ++cm.fp;
        if (!predicted && actual) ++cm.fn;
        if (!predicted && !actual) ++cm.tn;
    }
    return cm;
}

struct Rates {
    double precision = 0.0;
    double recall = 0.0;
    double fpr = 0.0;
    bool degenerate = false; // some denominator was zero

    bool operator==(const Rates&) const = default;
};

inline Rates rates(const ConfusionMatrix& cm) {
    Rates r;
    if (cm.tp + cm.fp > 0) {
        r.precision = static_cast<double>(cm.tp) / (cm.tp + cm.fp);
    } else {
        r.degenerate = true;
    }
    if (cm.tp + cm.fn > 0) {
        r.recall = static_cast<double>(cm.tp) / (cm.tp + cm.fn);
    } else {
        r.degenerate = true;
    }
    if (cm.fp + cm.tn > 0) {
        r.fpr = static_cast<double>(cm.fp) / (cm.fp + cm.tn);
    } else {
        r.degenerate = true;
    }
    return r;
}

inline double f_beta(const ConfusionMatrix& cm, double beta) {
    if (!(beta > 0.0)) {
        throw Error("invalid-beta", "f_beta requires beta > 0");
    }
    double p = cm.tp + cm.fp > 0 ? static_cast<double>(cm.tp) / (cm.tp + cm.fp) : 0.0;
    double r = cm.tp + cm.fn > 0 ? static_cast<double>(cm.tp) / (cm.tp + cm.fn) : 0.0;
    double b2 = beta * beta;
    double denominator = b2 * p + r;
    if (denominator == 0.0) return 0.0;
    return (1.0 + b2) * p * r / denominator;
}

struct SweepRow {
    double tau = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double fpr = 0.0;

    bool operator==(const SweepRow&) const = default;
};

// One row per candidate threshold: 0, every midpoint between consecutive
// distinct confidences, and 1. Flagging uses the filter's decision rule so
// sweep rows describe exactly what run_filter would do at that tau.
inline std::vector<SweepRow> sweep_threshold(const std::vector<MarginSample>& samples, double a,
                                             double b) {
    std::vector<double> confidences;
    std::vector<int> labels;
    int positives = 0;
    CalibrationParams params{a, b, 0.5};
    for (const MarginSample& s : samples) {
        if (!s.label) {
            throw Error("insufficient-labels", "sweep sample '" + s.candidate_id + "' has no label");
        }
        confidences.push_back(confidence(s.margin, params));
        labels.push_back(*s.label == Verdict::Vulnerable ? 1 : 0);
        positives += labels.back();
    }
    if (positives == 0 || positives == static_cast<int>(labels.size())) {
        throw Error("insufficient-labels", "sweep requires at least one of each label");
    }

    std::vector<double> distinct = confidences;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::vector<double> taus{0.0};
    for (size_t i = 1; i < distinct.size(); ++i) {
        taus.push_back((distinct[i - 1] + distinct[i]) / 2.0);
    }
    taus.push_back(1.0);
    std::sort(taus.begin(), taus.end());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());

    std::vector<SweepRow> rows;
    for (double tau : taus) {
        ConfusionMatrix cm;
        for (size_t i = 0; i < confidences.size(); ++i) {
            bool flagged = flag_decision(confidences[i], tau);
            if (labels[i] == 1) {
                flagged ? ++cm.tp : ++cm.fn;
            } else {
                flagged ? ++cm.fp : ++cm.tn;
            }
        }
        Rates r = rates(cm);
        rows.push_back({tau, r.precision, r.recall, r.fpr});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Ground-truth label file: one {"candidate_id","label"} object per line,
// label lowercase "vulnerable" | "safe".

inline std::map<std::string, Verdict> read_ground_truth(std::istream& in) {
    std::map<std::string, Verdict> labels;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error("malformed-record",
                        "label line " + std::to_string(line_no) + ": " + e.what());
        }
        detail::require_known_fields(j, {"candidate_id", "label"}, "ground-truth label");
        std::string id = j.at("candidate_id").get<std::string>();
        std::string label = j.at("label").get<std::string>();
        Verdict v;
        if (label == "vulnerable") {
            v = Verdict::Vulnerable;
        } else if (label == "safe") {
            v = Verdict::Safe;
        } else {
            throw Error("malformed-record", "unknown label '" + label + "' on line " +
                                                std::to_string(line_no));
        }
        auto [it, inserted] = labels.emplace(id, v);
        if (!inserted) {
            throw Error("duplicate-record", "candidate '" + id + "' labeled twice");
        }
    }
    return labels;
}

inline std::map<std::string, Verdict> load_ground_truth(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io-error", "cannot read labels '" + path + "'");
    return read_ground_truth(in);
}

} // namespace gauntlet
