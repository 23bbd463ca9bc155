#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "gauntlet/templates.hpp"
#include "test_support.hpp"

using namespace gauntlet;

namespace {

auto error_code_is(const std::string& code) {
    return Catch::Matchers::Predicate<Error>(
        [code](const Error& e) { return e.code() == code; }, "error code is " + code);
}

} // namespace

TEST_CASE("render_template substitutes named placeholders") {
    CHECK(render_template("review {code} for {cwe}",
                          {{"code", "strcpy(a, b)"}, {"cwe", "CWE-787"}}) ==
          "review strcpy(a, b) for CWE-787");
    CHECK(render_template("{x}{x} and {x}", {{"x", "ha"}}) == "haha and ha");
    CHECK(render_template("plain text", {}) == "plain text");
    CHECK(render_template("empty: <{v}>", {{"v", ""}}) == "empty: <>");
}

TEST_CASE("render_template leaves unknown or unterminated placeholders alone") {
    CHECK(render_template("keep {unknown} as is", {{"known", "1"}}) == "keep {unknown} as is");
    CHECK(render_template("dangling {oops", {{"oops", "no"}}) == "dangling {oops");
    CHECK(render_template("braces {} stay", {}) == "braces {} stay");
}

TEST_CASE("render_template does not re-expand inserted values") {
    // A value containing placeholder syntax must be inserted verbatim, not
    // treated as a new placeholder — otherwise crafted code snippets could
    // smuggle text into unrelated slots.
    CHECK(render_template("a={a} b={b}", {{"a", "{b}"}, {"b", "two"}}) == "a={b} b=two");
}

TEST_CASE("default templates expose the slots each stage fills in") {
    PromptTemplates defaults = PromptTemplates::defaults();

    CHECK(defaults.validator.find("{candidate_code}") != std::string::npos);
    CHECK(defaults.validator.find("{kb_code}") != std::string::npos);
    CHECK(defaults.validator.find("{description}") != std::string::npos);
    CHECK(defaults.validator.find("{cwe_ids}") != std::string::npos);

    CHECK(defaults.researcher.find("{candidate_code}") != std::string::npos);
    CHECK(defaults.researcher.find("{prior_evidence}") != std::string::npos);
    CHECK(defaults.researcher.find("{transcript_so_far}") != std::string::npos);

    CHECK(defaults.author.find("{candidate_code}") != std::string::npos);
    CHECK(defaults.author.find("{transcript_so_far}") != std::string::npos);

    CHECK(defaults.moderator.find("{candidate_code}") != std::string::npos);
    CHECK(defaults.moderator.find("{transcript_so_far}") != std::string::npos);

    CHECK(defaults.board.find("{candidate_code}") != std::string::npos);
    CHECK(defaults.board.find("{summary}") != std::string::npos);

    CHECK(defaults.relabel.find("{candidate_code}") != std::string::npos);
}

TEST_CASE("default templates spell out the reply grammar each parser expects") {
    PromptTemplates defaults = PromptTemplates::defaults();
    CHECK(defaults.validator.find("MATCH: TRUE") != std::string::npos);
    CHECK(defaults.validator.find("MATCH: FALSE") != std::string::npos);
    CHECK(defaults.board.find("VERDICT: VULNERABLE") != std::string::npos);
    CHECK(defaults.board.find("VERDICT: SAFE") != std::string::npos);
    CHECK(defaults.board.find("CONFIDENCE:") != std::string::npos);
    CHECK(defaults.relabel.find("LABEL: VULNERABLE") != std::string::npos);
    CHECK(defaults.relabel.find("LABEL: SAFE") != std::string::npos);
}

TEST_CASE("read_text_file round-trips bytes and reports missing paths") {
    testsupport::TempDir dir;
    std::string path = dir.file("template.txt");
    const std::string body = "Inspect {candidate_code}.\nAnswer with VERDICT: SAFE\n";
    testsupport::write_file(path, body);
    CHECK(read_text_file(path) == body);
    CHECK_THROWS_MATCHES(read_text_file(dir.file("absent.txt")), Error,
                         error_code_is("io-error"));
}
