// gauntlet: four-stage just-in-time vulnerability triage over commit diffs.
//
//   scan       run the pipeline over a diff and write findings
//   ingest-kb  validate a knowledge base and cache its embeddings
//   calibrate  fit the filter's logistic mapping and threshold
//   eval       score findings against ground-truth labels
//   adapt      relabel deployment flags, cluster false positives, export
//   report     print the cost/funnel analysis of a finished run
//
// Exit codes: 0 clean, 1 startup or usage failure, 2 when a scan finished but
// some candidates produced error records.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gauntlet/gauntlet.hpp"

namespace fs = std::filesystem;

namespace {

std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

gauntlet::Clock make_clock(const std::string& now_flag) {
    if (now_flag.empty()) return gauntlet::system_clock_now;
    std::int64_t fixed = gauntlet::parse_utc(now_flag);
    return [fixed] { return fixed; };
}

std::string read_diff_input(const std::string& diff_arg) {
    if (diff_arg == "-") {
        std::ostringstream buffer;
        buffer << std::cin.rdbuf();
        return buffer.str();
    }
    return gauntlet::read_text_file(diff_arg);
}

// Manual labels and ground truth share the {"candidate_id","label"} format.
std::map<std::string, gauntlet::Verdict> load_label_map(const std::string& path) {
    return gauntlet::load_ground_truth(path);
}

struct ScanArgs {
    std::string diff;
    std::string src = ".";
    std::string kb;
    std::string config;
    std::string mode;
    std::string out;
    std::string repo = "local";
    std::string commit = "HEAD";
    std::string now;
};

int cmd_scan(const ScanArgs& args) {
    gauntlet::ConfigData config = gauntlet::load_config(args.config);
    if (!args.mode.empty()) config.pipeline.mode = gauntlet::mode_from_string(args.mode);

    gauntlet::KnowledgeBase kb =
        gauntlet::load_knowledge_base(args.kb, config.pipeline.embedding_dimension);
    std::unique_ptr<gauntlet::Provider> provider = gauntlet::make_provider(config);
    gauntlet::Gateway gateway(*provider, config.retry);
    gauntlet::PromptTemplates templates = gauntlet::load_templates(config);

    std::string diff_text = read_diff_input(args.diff);
    gauntlet::ExtractionContext extraction{args.repo, args.commit};
    std::vector<gauntlet::FunctionCandidate> candidates = gauntlet::assemble_candidates(
        diff_text,
        [&](const std::string& file_path) {
            return gauntlet::read_text_file((fs::path(args.src) / file_path).string());
        },
        config.pipeline, extraction);

    fs::create_directories(args.out);
    gauntlet::ScanPaths paths;
    paths.findings = (fs::path(args.out) / "findings.jsonl").string();
    paths.transcripts = (fs::path(args.out) / "transcripts.jsonl").string();
    paths.run = (fs::path(args.out) / "run.json").string();

    {
        std::ofstream out(fs::path(args.out) / "candidates.jsonl", std::ios::binary);
        if (!out) throw gauntlet::Error("io-error", "cannot write candidates file");
        gauntlet::write_candidates(out, candidates);
    }

    gauntlet::ScanRun run = gauntlet::run_scan(candidates, kb, config.pipeline, gateway, templates,
                                               paths, make_clock(args.now));

    gauntlet::CostReport report = gauntlet::cost_report(run);
    {
        std::ofstream out(fs::path(args.out) / "cost_report.txt", std::ios::binary);
        if (!out) throw gauntlet::Error("io-error", "cannot write cost report");
        out << gauntlet::render_cost_report(report);
    }

    std::cout << "run " << run.run_id << ": " << run.candidate_count << " candidate(s), "
              << run.findings.size() << " finding(s), " << run.errors.size() << " error(s)\n";
    std::cout << "wrote " << paths.findings << "\n";
    for (const gauntlet::ErrorRecord& e : run.errors) {
        std::cerr << "candidate " << e.candidate_id << ": [" << e.code << "] " << e.message
                  << "\n";
    }
    return run.errors.empty() ? 0 : 2;
}

int cmd_ingest_kb(const std::string& kb_path, const std::string& out_path, int dimension) {
    gauntlet::KnowledgeBase kb = gauntlet::load_knowledge_base(kb_path, dimension);
    gauntlet::materialize_embeddings(kb);
    gauntlet::save_knowledge_base(out_path, kb);
    std::cout << "ingested " << kb.records.size() << " record(s) at dimension " << kb.dimension
              << "\n";
    return 0;
}

void print_margin_metrics(const char* prefix, const std::vector<gauntlet::MarginSample>& samples,
                          const gauntlet::CalibrationParams& params) {
    gauntlet::ConfusionMatrix cm;
    for (const gauntlet::MarginSample& s : samples) {
        if (!s.label) {
            throw gauntlet::Error("insufficient-labels",
                                  "sample '" + s.candidate_id + "' has no label");
        }
        bool flagged = gauntlet::flag_decision(gauntlet::confidence(s.margin, params), params.tau);
        bool vulnerable = *s.label == gauntlet::Verdict::Vulnerable;
        if (vulnerable) {
            flagged ? ++cm.tp : ++cm.fn;
        } else {
            flagged ? ++cm.fp : ++cm.tn;
        }
    }
    gauntlet::Rates r = gauntlet::rates(cm);
    std::cout << prefix << " fpr = " << format_metric(r.fpr) << "\n";
    std::cout << prefix << " recall = " << format_metric(r.recall) << "\n";
}

int cmd_calibrate(const std::string& samples_path, double target_fpr, const std::string& config_path,
                  const std::string& holdout_path) {
    std::vector<gauntlet::MarginSample> samples = gauntlet::load_margin_samples(samples_path);
    gauntlet::CalibrationParams params = gauntlet::calibrate(samples, target_fpr);
    gauntlet::update_config_values(config_path, {{"filter.a", format_real(params.a)},
                                                 {"filter.b", format_real(params.b)},
                                                 {"filter.tau", format_real(params.tau)}});
    std::cout << "a = " << format_real(params.a) << "\n";
    std::cout << "b = " << format_real(params.b) << "\n";
    std::cout << "tau = " << format_real(params.tau) << "\n";
    print_margin_metrics("train", samples, params);
    if (!holdout_path.empty()) {
        print_margin_metrics("holdout", gauntlet::load_margin_samples(holdout_path), params);
    }
    return 0;
}

int cmd_eval(const std::string& findings_path, const std::string& labels_path, double beta) {
    gauntlet::FindingsFile file = gauntlet::load_findings(findings_path);
    std::map<std::string, gauntlet::Verdict> labels = gauntlet::load_ground_truth(labels_path);
    gauntlet::ConfusionMatrix cm = gauntlet::confusion(file.findings, labels);
    gauntlet::Rates r = gauntlet::rates(cm);
    std::cout << "tp = " << cm.tp << ", fp = " << cm.fp << ", tn = " << cm.tn
              << ", fn = " << cm.fn << "\n";
    std::cout << "precision = " << format_metric(r.precision) << "\n";
    std::cout << "recall = " << format_metric(r.recall) << "\n";
    std::cout << "fpr = " << format_metric(r.fpr) << "\n";
    // The headline metric and F1 are always shown side by side so the
    // precision emphasis stays explicit.
    std::cout << "f0.3 = " << format_metric(gauntlet::f_beta(cm, gauntlet::kHeadlineBeta)) << "\n";
    std::cout << "f1 = " << format_metric(gauntlet::f_beta(cm, 1.0)) << "\n";
    if (beta != gauntlet::kHeadlineBeta && beta != 1.0) {
        std::cout << "f" << beta << " = " << format_metric(gauntlet::f_beta(cm, beta)) << "\n";
    }
    return 0;
}

struct AdaptArgs {
    std::string findings;
    std::string candidates;
    std::string config;
    std::string out;
    std::string manual;
};

int cmd_adapt(const AdaptArgs& args) {
    gauntlet::ConfigData config = gauntlet::load_config(args.config);
    std::unique_ptr<gauntlet::Provider> provider = gauntlet::make_provider(config);
    gauntlet::Gateway gateway(*provider, config.retry);
    gauntlet::PromptTemplates templates = gauntlet::load_templates(config);

    gauntlet::FindingsFile file = gauntlet::load_findings(args.findings);
    std::map<std::string, gauntlet::FunctionCandidate> candidates;
    for (gauntlet::FunctionCandidate& c : gauntlet::load_candidates(args.candidates)) {
        candidates[c.id] = std::move(c);
    }
    std::map<std::string, gauntlet::Verdict> manual;
    if (!args.manual.empty()) manual = load_label_map(args.manual);

    // Only findings the orchestrator marked adaptation-eligible (deployment
    // runs whose trail reached the Adapter stage) are audited here.
    std::vector<gauntlet::RelabelInput> inputs;
    std::map<std::string, std::vector<std::string>> cwes;
    for (const gauntlet::Finding& f : file.findings) {
        bool eligible = false;
        for (const gauntlet::StageDecision& d : f.trail) {
            if (d.stage == gauntlet::Stage::Adapter) eligible = true;
        }
        if (!eligible) continue;
        auto it = candidates.find(f.candidate_id);
        if (it == candidates.end()) {
            throw gauntlet::Error("inconsistent-inputs",
                                  "finding '" + f.candidate_id + "' has no candidate record");
        }
        inputs.push_back({it->second, f.final_verdict});
        cwes[f.candidate_id] = f.cwe_ids;
    }

    gauntlet::RelabelResult relabeled = gauntlet::relabel(inputs, manual, gateway, templates);
    for (const gauntlet::RelabelSkip& skip : relabeled.skipped) {
        std::cerr << "skipped " << skip.candidate_id << ": " << skip.reason << "\n";
    }

    std::vector<gauntlet::LabeledOutcome> false_positives;
    std::map<std::string, std::vector<double>> embeddings;
    std::map<std::string, std::string> sources;
    for (const gauntlet::LabeledOutcome& o : relabeled.outcomes) {
        if (o.predicted != gauntlet::Verdict::Vulnerable ||
            o.ground_truth != gauntlet::Verdict::Safe) {
            continue;
        }
        false_positives.push_back(o);
        const gauntlet::FunctionCandidate& c = candidates.at(o.candidate_id);
        embeddings[o.candidate_id] =
            gauntlet::embed(c.source, config.pipeline.embedding_dimension);
        sources[o.candidate_id] = c.source;
    }

    std::vector<gauntlet::FPPattern> patterns = gauntlet::cluster_false_positives(
        false_positives, embeddings, config.pipeline.cluster_threshold, cwes);
    gauntlet::AdaptationDataset dataset =
        gauntlet::build_adaptation_set(patterns, relabeled.outcomes, sources);

    std::ofstream out(args.out, std::ios::binary);
    if (!out) throw gauntlet::Error("io-error", "cannot write adaptation dataset '" + args.out + "'");
    gauntlet::write_adaptation_dataset(out, dataset);

    std::cout << relabeled.outcomes.size() << " relabeled, " << false_positives.size()
              << " false positive(s), " << patterns.size() << " pattern(s), "
              << dataset.records.size() << " dataset record(s)\n";
    return 0;
}

int cmd_report(const std::string& run_path) {
    gauntlet::ScanRun run = gauntlet::load_run_metadata(run_path);
    fs::path base = fs::path(run_path).parent_path();
    fs::path findings = run.findings_path;
    if (findings.is_relative()) findings = base / findings;
    gauntlet::FindingsFile file = gauntlet::load_findings(findings.string());
    run.findings = std::move(file.findings);
    run.errors = std::move(file.errors);
    std::cout << gauntlet::render_cost_report(gauntlet::cost_report(run));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"four-stage just-in-time vulnerability triage"};
    app.require_subcommand(1);

    ScanArgs scan_args;
    CLI::App* scan = app.add_subcommand("scan", "run the pipeline over a commit diff");
    scan->add_option("--diff", scan_args.diff, "unified diff file, or - for stdin")->required();
    scan->add_option("--src", scan_args.src, "root of the post-change source tree");
    scan->add_option("--kb", scan_args.kb, "knowledge base file")->required();
    scan->add_option("--config", scan_args.config, "config file")->required();
    scan->add_option("--mode", scan_args.mode, "override config mode: oss or deployment")
        ->check(CLI::IsMember({"oss", "deployment"}));
    scan->add_option("--out", scan_args.out, "output directory")->required();
    scan->add_option("--repo", scan_args.repo, "repository label for candidate ids");
    scan->add_option("--commit", scan_args.commit, "commit id for candidate ids");
    scan->add_option("--now", scan_args.now, "fixed UTC timestamp (for reproducible output)");

    std::string ingest_kb_path, ingest_out_path;
    int ingest_dimension = gauntlet::kDefaultEmbeddingDimension;
    CLI::App* ingest = app.add_subcommand("ingest-kb", "validate a knowledge base and cache embeddings");
    ingest->add_option("--kb", ingest_kb_path, "knowledge base file")->required();
    ingest->add_option("--out", ingest_out_path, "materialized knowledge base output")->required();
    ingest->add_option("--dimension", ingest_dimension, "embedding dimension");

    std::string cal_samples, cal_config, cal_holdout;
    double cal_target_fpr = 0.0;
    CLI::App* cal = app.add_subcommand("calibrate", "fit filter calibration from labeled margins");
    cal->add_option("--samples", cal_samples, "labeled margin samples")->required();
    cal->add_option("--target-fpr", cal_target_fpr, "maximum acceptable false positive rate")
        ->required();
    cal->add_option("--config", cal_config, "config file to write filter.a/b/tau into")->required();
    cal->add_option("--holdout", cal_holdout, "labeled margin samples held out for reporting");

    std::string eval_findings, eval_labels;
    double eval_beta = gauntlet::kHeadlineBeta;
    CLI::App* eval = app.add_subcommand("eval", "score findings against ground-truth labels");
    eval->add_option("--findings", eval_findings, "findings file from a scan")->required();
    eval->add_option("--labels", eval_labels, "ground-truth label file")->required();
    eval->add_option("--beta", eval_beta, "extra F-beta to report");

    AdaptArgs adapt_args;
    CLI::App* adapt = app.add_subcommand("adapt", "relabel deployment flags and export adaptation data");
    adapt->add_option("--findings", adapt_args.findings, "findings file from a deployment scan")
        ->required();
    adapt->add_option("--candidates", adapt_args.candidates, "candidates file from the same scan")
        ->required();
    adapt->add_option("--config", adapt_args.config, "config file")->required();
    adapt->add_option("--out", adapt_args.out, "adaptation dataset output")->required();
    adapt->add_option("--manual", adapt_args.manual, "manual labels (take precedence)");

    std::string report_run;
    CLI::App* report = app.add_subcommand("report", "print the cost report of a finished run");
    report->add_option("--run", report_run, "run.json written by scan")->required();

    try {
        app.parse(argc, argv);
        if (scan->parsed()) return cmd_scan(scan_args);
        if (ingest->parsed()) return cmd_ingest_kb(ingest_kb_path, ingest_out_path, ingest_dimension);
        if (cal->parsed()) return cmd_calibrate(cal_samples, cal_target_fpr, cal_config, cal_holdout);
        if (eval->parsed()) return cmd_eval(eval_findings, eval_labels, eval_beta);
        if (adapt->parsed()) return cmd_adapt(adapt_args);
        if (report->parsed()) return cmd_report(report_run);
        return 1;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const gauntlet::Error& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
