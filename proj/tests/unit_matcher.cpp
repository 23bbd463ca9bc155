#include <catch2/catch_amalgamated.hpp>

#include "gauntlet/matcher.hpp"
#include "test_support.hpp"

#include <cmath>

using namespace gauntlet;
using testsupport::Rng;

namespace {

const std::string kCandidateSource = "int f(int x) { return x + 1; }";

FunctionCandidate candidate() { return testsupport::make_candidate("cand-1", kCandidateSource); }

// A unit vector at angle acos(similarity) from q, rotated toward an axis
// where q is zero, so the cosine against q is exactly `similarity` up to
// rounding.
std::vector<double> vector_at_similarity(const std::vector<double>& q, double similarity,
                                         size_t free_axis) {
    std::vector<double> v(q.size(), 0.0);
    double ortho = std::sqrt(1.0 - similarity * similarity);
    for (size_t i = 0; i < q.size(); ++i) v[i] = similarity * q[i];
    v[free_axis] += ortho;
    return v;
}

size_t find_zero_bucket(const std::vector<double>& q) {
    for (size_t i = 0; i < q.size(); ++i) {
        if (q[i] == 0.0) return i;
    }
    throw std::runtime_error("no zero bucket");
}

KnowledgeBase three_hit_kb() {
    std::vector<double> q = embed(kCandidateSource);
    size_t axis = find_zero_bucket(q);
    KnowledgeBase kb;
    kb.records.push_back(testsupport::make_record("KB-A", kCandidateSource, {"CWE-787"}));
    kb.records.back().embedding = q; // similarity 1.0
    kb.records.push_back(testsupport::make_record("KB-B", "int g(int y) { return y + 2; }"));
    kb.records.back().embedding = vector_at_similarity(q, 0.90, axis);
    kb.records.push_back(testsupport::make_record("KB-C", "int h(int z) { return z + 3; }"));
    kb.records.back().embedding = vector_at_similarity(q, 0.87, axis);
    return kb;
}

Gateway make_gateway(ScriptedProvider& provider) { return Gateway(provider, RetryPolicy{3, 0}); }

} // namespace

TEST_CASE("validator parses the match grammar", "[matcher]") {
    KnowledgeBase kb = three_hit_kb();
    SECTION("MATCH: TRUE confirms") {
        ScriptedBehavior behavior;
        behavior.push(Stage::Matcher, "cand-1", scripted_completion("MATCH: TRUE"));
        ScriptedProvider provider(std::move(behavior));
        Gateway gateway = make_gateway(provider);
        CHECK(validate_match(candidate(), kb.records[0], gateway) == MatchValidation::Confirmed);
    }
    SECTION("analysis followed by MATCH: FALSE rejects") {
        ScriptedBehavior behavior;
        behavior.push(Stage::Matcher, "cand-1",
                      scripted_completion("the similarity is superficial\nMATCH: FALSE"));
        ScriptedProvider provider(std::move(behavior));
        Gateway gateway = make_gateway(provider);
        CHECK(validate_match(candidate(), kb.records[0], gateway) == MatchValidation::Rejected);
    }
    SECTION("garbage twice raises unparseable-verdict") {
        ScriptedBehavior behavior;
        behavior.push(Stage::Matcher, "cand-1", scripted_completion("hmm, looks dodgy"));
        behavior.push(Stage::Matcher, "cand-1", scripted_completion("still no grammar line"));
        ScriptedProvider provider(std::move(behavior));
        Gateway gateway = make_gateway(provider);
        CHECK_THROWS_MATCHES(validate_match(candidate(), kb.records[0], gateway), Error,
                             Catch::Matchers::Predicate<Error>([](const Error& e) {
                                 return e.code() == "unparseable-verdict";
                             }));
    }
    SECTION("trailing whitespace and carriage returns are tolerated") {
        ScriptedBehavior behavior;
        behavior.push(Stage::Matcher, "cand-1", scripted_completion("MATCH: TRUE  \r"));
        ScriptedProvider provider(std::move(behavior));
        Gateway gateway = make_gateway(provider);
        CHECK(validate_match(candidate(), kb.records[0], gateway) == MatchValidation::Confirmed);
    }
    SECTION("first conforming line wins") {
        ScriptedBehavior behavior;
        behavior.push(Stage::Matcher, "cand-1",
                      scripted_completion("MATCH: FALSE\nMATCH: TRUE"));
        ScriptedProvider provider(std::move(behavior));
        Gateway gateway = make_gateway(provider);
        CHECK(validate_match(candidate(), kb.records[0], gateway) == MatchValidation::Rejected);
    }
    SECTION("lowercase grammar is not accepted") {
        ScriptedBehavior behavior;
        behavior.push(Stage::Matcher, "cand-1", scripted_completion("match: true"));
        behavior.push(Stage::Matcher, "cand-1", scripted_completion("Match: True"));
        ScriptedProvider provider(std::move(behavior));
        Gateway gateway = make_gateway(provider);
        CHECK_THROWS_AS(validate_match(candidate(), kb.records[0], gateway), Error);
    }
    SECTION("a re-ask recovers from one non-conforming response") {
        ScriptedBehavior behavior;
        behavior.push(Stage::Matcher, "cand-1", scripted_completion("thinking out loud"));
        behavior.push(Stage::Matcher, "cand-1", scripted_completion("MATCH: TRUE"));
        ScriptedProvider provider(std::move(behavior));
        Gateway gateway = make_gateway(provider);
        CHECK(validate_match(candidate(), kb.records[0], gateway) == MatchValidation::Confirmed);
        CHECK(gateway.ledger_snapshot().entries.size() == 2);
    }
}

TEST_CASE("the validator prompt carries both code bodies and the record metadata", "[matcher]") {
    KnowledgeBase kb;
    kb.records.push_back(testsupport::make_record("KB-X", "void risky(char* p) { gets(p); }",
                                                  {"CWE-242", "CWE-787"}, "uses gets()"));
    ScriptedBehavior behavior;
    behavior.push(Stage::Matcher, "cand-1", scripted_completion("MATCH: FALSE"));
    ScriptedProvider provider(std::move(behavior));
    Gateway gateway = make_gateway(provider);
    validate_match(candidate(), kb.records[0], gateway);

    auto calls = provider.recorded_completions();
    REQUIRE(calls.size() == 1);
    REQUIRE(calls[0].request.role_messages.size() == 1);
    const std::string& prompt = calls[0].request.role_messages[0].content;
    CHECK(prompt.find(kCandidateSource) != std::string::npos);
    CHECK(prompt.find("void risky(char* p) { gets(p); }") != std::string::npos);
    CHECK(prompt.find("uses gets()") != std::string::npos);
    CHECK(prompt.find("CWE-242, CWE-787") != std::string::npos);
    CHECK(prompt.find("{candidate_code}") == std::string::npos);
}

TEST_CASE("no hit above the similarity floor passes on with zero calls", "[matcher]") {
    KnowledgeBase kb;
    kb.records.push_back(
        testsupport::make_record("KB-far", "completely unrelated tokens everywhere"));
    materialize_embeddings(kb);

    ScriptedProvider provider{ScriptedBehavior{}};
    Gateway gateway = make_gateway(provider);
    PipelineConfig config;

    StageDecision d = run_matcher(candidate(), kb, config, gateway);
    CHECK(d.stage == Stage::Matcher);
    CHECK(d.outcome == Outcome::PassedOn);
    CHECK(d.confidence == 0.0);
    CHECK_FALSE(d.matched_kb_id.has_value());
    CHECK(d.evidence == "no hit above min_similarity");
    CHECK(gateway.ledger_snapshot().entries.empty());
}

TEST_CASE("the first confirmed hit flags with exactly one call", "[matcher]") {
    KnowledgeBase kb = three_hit_kb();
    ScriptedBehavior behavior;
    behavior.push(Stage::Matcher, "cand-1",
                  scripted_completion("same unchecked increment pattern\nMATCH: TRUE"));
    ScriptedProvider provider(std::move(behavior));
    Gateway gateway = make_gateway(provider);
    PipelineConfig config;

    CostLedger per_candidate;
    StageDecision d = run_matcher(candidate(), kb, config, gateway,
                                  PromptTemplates::defaults(), &per_candidate);
    CHECK(d.outcome == Outcome::FlaggedVulnerable);
    CHECK(d.confidence == 1.0);
    REQUIRE(d.matched_kb_id.has_value());
    CHECK(*d.matched_kb_id == "KB-A");
    CHECK(d.evidence.find("same unchecked increment pattern") != std::string::npos);
    CHECK(d.evidence.find("untried hits: KB-B KB-C") != std::string::npos);
    CHECK(gateway.ledger_snapshot().entries.size() == 1);
    CHECK(per_candidate.entries.size() == 1);
}

TEST_CASE("a rejected first hit falls through to a confirmed second hit", "[matcher]") {
    KnowledgeBase kb = three_hit_kb();
    ScriptedBehavior behavior;
    behavior.push(Stage::Matcher, "cand-1", scripted_completion("MATCH: FALSE"));
    behavior.push(Stage::Matcher, "cand-1", scripted_completion("MATCH: TRUE"));
    ScriptedProvider provider(std::move(behavior));
    Gateway gateway = make_gateway(provider);
    PipelineConfig config;

    StageDecision d = run_matcher(candidate(), kb, config, gateway);
    CHECK(d.outcome == Outcome::FlaggedVulnerable);
    REQUIRE(d.matched_kb_id.has_value());
    CHECK(*d.matched_kb_id == "KB-B");
    CHECK(d.evidence.find("untried hits: KB-C") != std::string::npos);
    CHECK(gateway.ledger_snapshot().entries.size() == 2);
}

TEST_CASE("all hits rejected passes on", "[matcher]") {
    KnowledgeBase kb = three_hit_kb();
    ScriptedBehavior behavior;
    for (int i = 0; i < 3; ++i) {
        behavior.push(Stage::Matcher, "cand-1", scripted_completion("MATCH: FALSE"));
    }
    ScriptedProvider provider(std::move(behavior));
    Gateway gateway = make_gateway(provider);
    PipelineConfig config;

    StageDecision d = run_matcher(candidate(), kb, config, gateway);
    CHECK(d.outcome == Outcome::PassedOn);
    CHECK(d.evidence == "no hit confirmed by validator");
    CHECK(gateway.ledger_snapshot().entries.size() == 3);
}

TEST_CASE("unparseable validator output fails open toward later stages", "[matcher]") {
    KnowledgeBase kb = three_hit_kb();
    kb.records.resize(1); // only KB-A
    ScriptedBehavior behavior;
    behavior.push(Stage::Matcher, "cand-1", scripted_completion("nonsense"));
    behavior.push(Stage::Matcher, "cand-1", scripted_completion("more nonsense"));
    ScriptedProvider provider(std::move(behavior));
    Gateway gateway = make_gateway(provider);
    PipelineConfig config;

    StageDecision d = run_matcher(candidate(), kb, config, gateway);
    CHECK(d.outcome == Outcome::PassedOn);
    CHECK(d.evidence.find("validator unparseable for hit KB-A") != std::string::npos);
    CHECK(gateway.ledger_snapshot().entries.size() == 2);
}

TEST_CASE("validator calls never exceed top_k per candidate", "[matcher]") {
    KnowledgeBase kb = three_hit_kb();
    PipelineConfig config;
    config.top_k = 3;

    SECTION("re-asks consume budget that later hits would have used") {
        ScriptedBehavior behavior;
        for (int i = 0; i < 3; ++i) {
            behavior.push(Stage::Matcher, "cand-1", scripted_completion("no grammar here"));
        }
        ScriptedProvider provider(std::move(behavior));
        Gateway gateway = make_gateway(provider);
        StageDecision d = run_matcher(candidate(), kb, config, gateway);
        CHECK(d.outcome == Outcome::PassedOn);
        CHECK(gateway.ledger_snapshot().entries.size() == 3); // 2 for KB-A, 1 for KB-B
        CHECK(d.evidence.find("validator unparseable for hit KB-A") != std::string::npos);
        CHECK(d.evidence.find("validator unparseable for hit KB-B") != std::string::npos);
        CHECK(d.evidence.find("budget exhausted before hit KB-C") != std::string::npos);
    }
    SECTION("clean rejections stay within budget") {
        ScriptedBehavior behavior;
        for (int i = 0; i < 3; ++i) {
            behavior.push(Stage::Matcher, "cand-1", scripted_completion("MATCH: FALSE"));
        }
        ScriptedProvider provider(std::move(behavior));
        Gateway gateway = make_gateway(provider);
        run_matcher(candidate(), kb, config, gateway);
        CHECK(gateway.ledger_snapshot().entries.size() == 3);
    }
}

TEST_CASE("the matcher never exits a candidate as safe", "[matcher]") {
    Rng rng(7007);
    KnowledgeBase kb = three_hit_kb();
    PipelineConfig config;
    for (int trial = 0; trial < 40; ++trial) {
        ScriptedBehavior behavior;
        for (int i = 0; i < 10; ++i) {
            switch (rng.uniform_int(0, 2)) {
                case 0:
                    behavior.push(Stage::Matcher, "cand-1", scripted_completion("MATCH: TRUE"));
                    break;
                case 1:
                    behavior.push(Stage::Matcher, "cand-1", scripted_completion("MATCH: FALSE"));
                    break;
                default:
                    behavior.push(Stage::Matcher, "cand-1", scripted_completion("garble"));
                    break;
            }
        }
        ScriptedProvider provider(std::move(behavior));
        Gateway gateway = make_gateway(provider);
        StageDecision d = run_matcher(candidate(), kb, config, gateway);
        CHECK(d.outcome != Outcome::ExitSafe);
        bool flagged = d.outcome == Outcome::FlaggedVulnerable;
        CHECK(d.matched_kb_id.has_value() == flagged);
    }
}

TEST_CASE("an empty knowledge base passes every candidate on", "[matcher]") {
    KnowledgeBase kb;
    ScriptedProvider provider{ScriptedBehavior{}};
    Gateway gateway = make_gateway(provider);
    PipelineConfig config;
    StageDecision d = run_matcher(candidate(), kb, config, gateway);
    CHECK(d.outcome == Outcome::PassedOn);
    CHECK(gateway.ledger_snapshot().entries.empty());
}
