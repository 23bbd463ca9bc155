#include <catch2/catch_amalgamated.hpp>

// End-to-end checks of the gauntlet binary: every subcommand is exercised
// through a real process with file fixtures, scripted providers, and a pinned
// clock, so output bytes and exit codes are asserted exactly.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gauntlet/gauntlet.hpp"
#include "test_support.hpp"

using namespace gauntlet;

namespace {

namespace fs = std::filesystem;

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string shell_quote(const std::string& arg) {
    std::string quoted = "'";
    for (char c : arg) {
        if (c == '\'') {
            quoted += "'\\''";
        } else {
            quoted += c;
        }
    }
    quoted += "'";
    return quoted;
}

CliResult run_cli(const std::vector<std::string>& args, const std::string& stdin_data = "") {
    testsupport::TempDir io;
    fs::path out_path = io.file("stdout");
    fs::path err_path = io.file("stderr");
    fs::path in_path = io.file("stdin");
    testsupport::write_file(in_path, stdin_data);

    std::string command = shell_quote(GAUNTLET_CLI_PATH);
    for (const std::string& arg : args) command += " " + shell_quote(arg);
    command += " < " + shell_quote(in_path.string());
    command += " > " + shell_quote(out_path.string());
    command += " 2> " + shell_quote(err_path.string());

    int status = std::system(command.c_str());
    CliResult result;
    result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = testsupport::read_file(out_path);
    result.err = testsupport::read_file(err_path);
    return result;
}

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

// ---------------------------------------------------------------------------
// Scan fixture: one C function edited by a two-line diff. With --repo demo
// and --commit abc123 the extracted candidate id is stable.

const std::string kCandidateId = "demo@abc123:src/lib.c:1-4";

const std::string kPostSource =
    "int add(int a, int b) {\n"
    "    int sum = a + b;\n"
    "    return sum;\n"
    "}\n";

const std::string kDiff =
    "--- a/src/lib.c\n"
    "+++ b/src/lib.c\n"
    "@@ -1,3 +1,4 @@\n"
    " int add(int a, int b) {\n"
    "-    return a + b;\n"
    "+    int sum = a + b;\n"
    "+    return sum;\n"
    " }\n";

// Lays out src/lib.c, an empty knowledge base, a scripted-provider config,
// and the diff inside `dir`, returning the config path.
struct ScanFixture {
    std::string diff_path;
    std::string src_dir;
    std::string kb_path;
    std::string config_path;
    std::string script_path;
};

ScanFixture make_scan_fixture(const testsupport::TempDir& dir, const std::string& script_lines) {
    ScanFixture fixture;
    fixture.src_dir = dir.file("src-tree");
    fs::create_directories(fs::path(fixture.src_dir) / "src");
    testsupport::write_file(fs::path(fixture.src_dir) / "src" / "lib.c", kPostSource);

    fixture.diff_path = dir.file("change.patch");
    testsupport::write_file(fixture.diff_path, kDiff);

    fixture.kb_path = dir.file("kb.jsonl");
    testsupport::write_file(fixture.kb_path, "");

    fixture.script_path = dir.file("script.jsonl");
    testsupport::write_file(fixture.script_path, script_lines);

    fixture.config_path = dir.file("gauntlet.conf");
    testsupport::write_file(fixture.config_path,
                            "mode = oss\n"
                            "provider.kind = scripted\n"
                            "provider.script = " + fixture.script_path + "\n");
    return fixture;
}

std::string loglik_line(const std::string& candidate_id, double vulnerable, double safe) {
    json j{{"stage", "Filter"},
           {"candidate_id", candidate_id},
           {"type", "loglik"},
           {"vulnerable", vulnerable},
           {"safe", safe}};
    return j.dump() + "\n";
}

std::string completion_line(const std::string& stage, const std::string& candidate_id,
                            const std::string& text) {
    json j{{"stage", stage}, {"candidate_id", candidate_id}, {"type", "completion"}, {"text", text}};
    return j.dump() + "\n";
}

std::string trial_script(const std::string& candidate_id, const std::string& board_text) {
    std::string script = loglik_line(candidate_id, -1.0, -3.0);
    script += completion_line("Inspector", candidate_id, "No bound is checked before the copy.");
    script += completion_line("Inspector", candidate_id, "The caller always passes a short string.");
    script += completion_line("Inspector", candidate_id,
                              "The researcher cites a concrete path; the author relies on intent.");
    script += completion_line("Inspector", candidate_id, board_text);
    return script;
}

std::vector<std::string> scan_args(const ScanFixture& fixture, const std::string& out_dir) {
    return {"scan",           "--diff",   fixture.diff_path, "--src",    fixture.src_dir,
            "--kb",           fixture.kb_path,              "--config", fixture.config_path,
            "--out",          out_dir,                      "--repo",   "demo",
            "--commit",       "abc123",                     "--now",    "2026-01-01T00:00:00Z"};
}

} // namespace

TEST_CASE("help lists every subcommand and exits cleanly") {
    CliResult result = run_cli({"--help"});
    CHECK(result.code == 0);
    for (const char* name : {"scan", "ingest-kb", "calibrate", "eval", "adapt", "report"}) {
        CHECK(contains(result.out, name));
    }
}

TEST_CASE("usage errors exit with code 1") {
    CliResult missing = run_cli({"scan"});
    CHECK(missing.code == 1);
    CHECK(contains(missing.err, "required"));

    CliResult unknown = run_cli({"frobnicate"});
    CHECK(unknown.code == 1);

    CliResult none = run_cli({});
    CHECK(none.code == 1);
}

TEST_CASE("a scan over a commit diff writes the full artifact set deterministically") {
    testsupport::TempDir dir;
    ScanFixture fixture = make_scan_fixture(dir, loglik_line(kCandidateId, -3.0, -1.0));

    std::string out_dir = dir.file("out");
    CliResult result = run_cli(scan_args(fixture, out_dir));
    INFO(result.err);
    REQUIRE(result.code == 0);
    CHECK(contains(result.out, "run run-1767225600: 1 candidate(s), 1 finding(s), 0 error(s)"));
    CHECK(contains(result.out, "wrote " + out_dir + "/findings.jsonl"));
    CHECK(result.err.empty());

    // The filter exited this candidate: a two-stage trail with a Safe verdict.
    FindingsFile findings = load_findings(out_dir + "/findings.jsonl");
    REQUIRE(findings.findings.size() == 1);
    CHECK(findings.errors.empty());
    const Finding& f = findings.findings[0];
    CHECK(f.candidate_id == kCandidateId);
    CHECK(f.trail.size() == 2);
    CHECK(f.final_verdict == Verdict::Safe);
    CHECK(f.created_at == 1767225600);
    CHECK(validate_finding(f).ok);

    std::vector<FunctionCandidate> candidates = load_candidates(out_dir + "/candidates.jsonl");
    REQUIRE(candidates.size() == 1);
    CHECK(candidates[0].id == kCandidateId);
    CHECK(candidates[0].source == "int add(int a, int b) {\n"
                                  "    int sum = a + b;\n"
                                  "    return sum;\n"
                                  "}");

    ScanRun run = load_run_metadata(out_dir + "/run.json");
    CHECK(run.run_id == "run-1767225600");
    CHECK(run.candidate_count == 1);
    CHECK(run.started_at == 1767225600);
    REQUIRE(run.finished_at.has_value());

    std::string report_text = testsupport::read_file(out_dir + "/cost_report.txt");
    CHECK(contains(report_text, "Matcher 1"));
    CHECK(contains(report_text, "Filter 1"));
    CHECK(contains(report_text, "Inspector 0"));
    CHECK(contains(report_text, "funnel monotone: yes"));

    // Same inputs, second output directory: every artifact byte matches,
    // except run.json whose recorded output paths legitimately differ.
    std::string out2 = dir.file("out2");
    CliResult rerun = run_cli(scan_args(fixture, out2));
    REQUIRE(rerun.code == 0);
    for (const char* name :
         {"findings.jsonl", "transcripts.jsonl", "candidates.jsonl", "cost_report.txt"}) {
        CHECK(testsupport::read_file(out_dir + "/" + name) ==
              testsupport::read_file(out2 + "/" + name));
    }
    ScanRun second = load_run_metadata(out2 + "/run.json");
    CHECK(second.run_id == run.run_id);
    CHECK(second.candidate_count == run.candidate_count);
    CHECK(second.started_at == run.started_at);
    CHECK(second.finished_at == run.finished_at);
}

TEST_CASE("an empty diff on stdin yields an empty run") {
    testsupport::TempDir dir;
    ScanFixture fixture = make_scan_fixture(dir, "");
    std::string out_dir = dir.file("out");

    std::vector<std::string> args = scan_args(fixture, out_dir);
    args[2] = "-"; // read the diff from stdin
    CliResult result = run_cli(args, "");
    REQUIRE(result.code == 0);
    CHECK(contains(result.out, "0 candidate(s), 0 finding(s), 0 error(s)"));
    CHECK(testsupport::read_file(out_dir + "/findings.jsonl") ==
          "{\"format\":\"gauntlet.findings\",\"version\":1}\n");
}

TEST_CASE("a candidate whose script runs dry surfaces an error record and exit code 2") {
    testsupport::TempDir dir;
    ScanFixture fixture = make_scan_fixture(dir, ""); // nothing scripted at all
    std::string out_dir = dir.file("out");

    CliResult result = run_cli(scan_args(fixture, out_dir));
    CHECK(result.code == 2);
    CHECK(contains(result.out, "1 candidate(s), 0 finding(s), 1 error(s)"));
    CHECK(contains(result.err, kCandidateId));
    CHECK(contains(result.err, "[script-exhausted]"));

    FindingsFile findings = load_findings(out_dir + "/findings.jsonl");
    CHECK(findings.findings.empty());
    REQUIRE(findings.errors.size() == 1);
    CHECK(findings.errors[0].candidate_id == kCandidateId);
    CHECK(findings.errors[0].code == "script-exhausted");
    CHECK(findings.errors[0].trail.size() == 1); // the matcher had already passed it on
}

TEST_CASE("deployment scan, adapt, and report work end to end") {
    testsupport::TempDir dir;
    ScanFixture fixture = make_scan_fixture(
        dir, trial_script(kCandidateId,
                          "VERDICT: VULNERABLE\nCONFIDENCE: 0.9\nCWE: CWE-787\n"
                          "The sum is written through an unchecked pointer."));
    std::string out_dir = dir.file("out");

    std::vector<std::string> args = scan_args(fixture, out_dir);
    args.push_back("--mode");
    args.push_back("deployment");
    CliResult scanned = run_cli(args);
    INFO(scanned.err);
    REQUIRE(scanned.code == 0);

    FindingsFile findings = load_findings(out_dir + "/findings.jsonl");
    REQUIRE(findings.findings.size() == 1);
    const Finding& f = findings.findings[0];
    CHECK(f.mode == Mode::Deployment);
    REQUIRE(f.trail.size() == 4);
    CHECK(f.trail.back().stage == Stage::Adapter);
    CHECK(f.final_verdict == Verdict::Vulnerable);

    // The reviewer overrules the flag; adapt exports it as a false positive.
    std::string manual_path = dir.file("manual.jsonl");
    testsupport::write_file(manual_path,
                            json{{"candidate_id", kCandidateId}, {"label", "safe"}}.dump() + "\n");
    std::string dataset_path = dir.file("adaptation.jsonl");
    std::vector<std::string> adapt_args = {
        "adapt",        "--findings", out_dir + "/findings.jsonl",
        "--candidates", out_dir + "/candidates.jsonl",
        "--config",     fixture.config_path,
        "--out",        dataset_path,
        "--manual",     manual_path};
    CliResult adapted = run_cli(adapt_args);
    INFO(adapted.err);
    REQUIRE(adapted.code == 0);
    CHECK(contains(adapted.out,
                   "1 relabeled, 1 false positive(s), 1 pattern(s), 1 dataset record(s)"));

    std::ifstream dataset_in(dataset_path);
    AdaptationDataset dataset = read_adaptation_dataset(dataset_in);
    REQUIRE(dataset.records.size() == 1);
    CHECK(dataset.records[0].candidate_id == kCandidateId);
    CHECK(dataset.records[0].pattern_id == "fp-" + kCandidateId);
    CHECK(dataset.records[0].corrected_label == Verdict::Safe);
    CHECK(dataset.records[0].reasoning.empty()); // manual labels carry none
    CHECK(dataset.records[0].source == "int add(int a, int b) {\n"
                                       "    int sum = a + b;\n"
                                       "    return sum;\n"
                                       "}");

    // A second adapt run over the same inputs is byte-identical.
    std::string dataset2_path = dir.file("adaptation2.jsonl");
    adapt_args[8] = dataset2_path;
    REQUIRE(run_cli(adapt_args).code == 0);
    CHECK(testsupport::read_file(dataset_path) == testsupport::read_file(dataset2_path));

    // report re-renders exactly what the scan wrote to disk.
    CliResult reported = run_cli({"report", "--run", out_dir + "/run.json"});
    REQUIRE(reported.code == 0);
    CHECK(reported.out == testsupport::read_file(out_dir + "/cost_report.txt"));
    CHECK(contains(reported.out, "inspector completion calls: 4"));

    CliResult missing = run_cli({"report", "--run", dir.file("absent.json")});
    CHECK(missing.code == 1);
    CHECK(contains(missing.err, "[io-error]"));
}

TEST_CASE("adapt rejects findings that have no matching candidate record") {
    testsupport::TempDir dir;
    ScanFixture fixture = make_scan_fixture(
        dir, trial_script(kCandidateId, "VERDICT: VULNERABLE\nCONFIDENCE: 0.9\nNo guard."));
    std::string out_dir = dir.file("out");
    std::vector<std::string> args = scan_args(fixture, out_dir);
    args.push_back("--mode");
    args.push_back("deployment");
    REQUIRE(run_cli(args).code == 0);

    std::string empty_candidates = dir.file("none.jsonl");
    testsupport::write_file(empty_candidates,
                            "{\"format\":\"gauntlet.candidates\",\"version\":1}\n");
    CliResult result = run_cli({"adapt", "--findings", out_dir + "/findings.jsonl",
                                "--candidates", empty_candidates, "--config",
                                fixture.config_path, "--out", dir.file("dataset.jsonl")});
    CHECK(result.code == 1);
    CHECK(contains(result.err, "[inconsistent-inputs]"));
}

TEST_CASE("ingest-kb materializes embeddings for every record") {
    testsupport::TempDir dir;
    KnowledgeBase kb;
    kb.records.push_back(testsupport::make_record("KB-1", "strcpy(dst, src);"));
    kb.records.push_back(
        testsupport::make_record("KB-2", "memcpy(dst, src, n);", {"CWE-125"}));
    std::string kb_path = dir.file("kb.jsonl");
    save_knowledge_base(kb_path, kb);

    std::string out_path = dir.file("kb-materialized.jsonl");
    CliResult result = run_cli({"ingest-kb", "--kb", kb_path, "--out", out_path});
    REQUIRE(result.code == 0);
    CHECK(contains(result.out, "ingested 2 record(s) at dimension 256"));

    KnowledgeBase materialized = load_knowledge_base(out_path, 256);
    REQUIRE(materialized.records.size() == 2);
    for (const VulnRecord& r : materialized.records) {
        REQUIRE(r.embedding.has_value());
        CHECK(r.embedding->size() == 256);
    }

    CliResult missing = run_cli({"ingest-kb", "--kb", dir.file("absent.jsonl"), "--out", out_path});
    CHECK(missing.code == 1);
    CHECK(contains(missing.err, "[io-error]"));
}

TEST_CASE("calibrate fits the filter and writes the parameters into the config") {
    testsupport::TempDir dir;

    auto margin_line = [](const std::string& id, double margin, const char* label) {
        return json{{"candidate_id", id}, {"margin", margin}, {"label", label}}.dump() + "\n";
    };
    std::string samples;
    for (int i = 0; i < 4; ++i) {
        samples += margin_line("v" + std::to_string(i), 2.0 + 0.2 * i, "vulnerable");
        samples += margin_line("s" + std::to_string(i), -2.0 - 0.2 * i, "safe");
    }
    std::string samples_path = dir.file("margins.jsonl");
    testsupport::write_file(samples_path, samples);

    std::string holdout;
    for (int i = 0; i < 4; ++i) {
        holdout += margin_line("hv" + std::to_string(i), 2.1 + 0.2 * i, "vulnerable");
        holdout += margin_line("hs" + std::to_string(i), -2.1 - 0.2 * i, "safe");
    }
    std::string holdout_path = dir.file("holdout.jsonl");
    testsupport::write_file(holdout_path, holdout);

    std::string config_path = dir.file("gauntlet.conf");
    testsupport::write_file(config_path, "# demo tuning\nmode = oss\n");

    CliResult result = run_cli({"calibrate", "--samples", samples_path, "--target-fpr", "0.2",
                                "--config", config_path, "--holdout", holdout_path});
    INFO(result.err);
    REQUIRE(result.code == 0);
    CHECK(contains(result.out, "a = "));
    CHECK(contains(result.out, "b = "));
    CHECK(contains(result.out, "tau = "));
    CHECK(contains(result.out, "train fpr = 0.0000"));
    CHECK(contains(result.out, "train recall = 1.0000"));
    CHECK(contains(result.out, "holdout fpr = 0.0000"));
    CHECK(contains(result.out, "holdout recall = 1.0000"));

    // The config file gained the fitted values and kept its existing lines.
    std::string config_text = testsupport::read_file(config_path);
    CHECK(contains(config_text, "# demo tuning"));
    CHECK(contains(config_text, "mode = oss"));
    ConfigData config = load_config(config_path);
    const CalibrationParams& params = config.pipeline.calibration;
    CHECK(params.tau >= 0.0);
    CHECK(params.tau <= 1.0);
    // The rewritten parameters separate the classes the samples came from.
    CHECK(flag_decision(confidence(2.0, params), params.tau));
    CHECK_FALSE(flag_decision(confidence(-2.0, params), params.tau));

    // A single-class sample set cannot be calibrated.
    std::string lopsided_path = dir.file("lopsided.jsonl");
    testsupport::write_file(lopsided_path, margin_line("v0", 2.0, "vulnerable"));
    CliResult lopsided = run_cli({"calibrate", "--samples", lopsided_path, "--target-fpr", "0.2",
                                  "--config", config_path});
    CHECK(lopsided.code == 1);
    CHECK(contains(lopsided.err, "[insufficient-labels]"));
}

TEST_CASE("eval scores a findings file against ground-truth labels") {
    testsupport::TempDir dir;

    // tp=3 fp=1 fn=2 tn=2: precision 0.75, recall 0.6, fpr 1/3.
    std::vector<Finding> findings;
    auto add_finding = [&findings](const std::string& id, Verdict verdict) {
        Finding f;
        f.candidate_id = id;
        StageDecision d;
        d.stage = Stage::Matcher;
        d.outcome = verdict == Verdict::Vulnerable ? Outcome::FlaggedVulnerable
                                                   : Outcome::ExitSafe;
        d.confidence = 1.0;
        d.evidence = "fixture";
        f.trail.push_back(d);
        f.final_verdict = verdict;
        findings.push_back(std::move(f));
    };
    for (int i = 0; i < 4; ++i) add_finding("v" + std::to_string(i), Verdict::Vulnerable);
    for (int i = 0; i < 4; ++i) add_finding("s" + std::to_string(i), Verdict::Safe);

    std::string findings_path = dir.file("findings.jsonl");
    {
        std::ofstream out(findings_path, std::ios::binary);
        write_findings(out, findings, {});
    }

    std::string labels;
    auto label_line = [](const std::string& id, const char* label) {
        return json{{"candidate_id", id}, {"label", label}}.dump() + "\n";
    };
    labels += label_line("v0", "vulnerable"); // tp
    labels += label_line("v1", "vulnerable"); // tp
    labels += label_line("v2", "vulnerable"); // tp
    labels += label_line("v3", "safe");       // fp
    labels += label_line("s0", "vulnerable"); // fn
    labels += label_line("s1", "vulnerable"); // fn
    labels += label_line("s2", "safe");       // tn
    labels += label_line("s3", "safe");       // tn
    std::string labels_path = dir.file("labels.jsonl");
    testsupport::write_file(labels_path, labels);

    CliResult result = run_cli({"eval", "--findings", findings_path, "--labels", labels_path});
    INFO(result.err);
    REQUIRE(result.code == 0);
    CHECK(contains(result.out, "tp = 3, fp = 1, tn = 2, fn = 2"));
    CHECK(contains(result.out, "precision = 0.7500"));
    CHECK(contains(result.out, "recall = 0.6000"));
    CHECK(contains(result.out, "fpr = 0.3333"));
    CHECK(contains(result.out, "f0.3 = 0.7348"));
    CHECK(contains(result.out, "f1 = 0.6667"));

    CliResult with_beta = run_cli(
        {"eval", "--findings", findings_path, "--labels", labels_path, "--beta", "2"});
    REQUIRE(with_beta.code == 0);
    CHECK(contains(with_beta.out, "f2 = 0.6250"));

    // Labels that do not cover every finding are an error, not a guess.
    std::string partial_path = dir.file("partial.jsonl");
    testsupport::write_file(partial_path, label_line("v0", "vulnerable"));
    CliResult partial = run_cli({"eval", "--findings", findings_path, "--labels", partial_path});
    CHECK(partial.code == 1);
    CHECK(contains(partial.err, "[incomplete-labels]"));
}
