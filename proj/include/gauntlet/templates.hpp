#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "gauntlet/error.hpp"

// Prompt templates for the model-facing stages. Deployments tune persona
// wording by pointing config keys at template files; the embedded defaults
// keep the library usable with no files on disk.

namespace gauntlet {

// Replaces {name} placeholders; unknown placeholders are left untouched.
inline std::string render_template(std::string_view text,
                                   const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(text.size());
    size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '{') {
            size_t close = text.find('}', i + 1);
            if (close != std::string_view::npos) {
                std::string name(text.substr(i + 1, close - i - 1));
                auto it = values.find(name);
                if (it != values.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += text[i];
        ++i;
    }
    return out;
}

struct PromptTemplates {
    std::string validator;
    std::string researcher;
    std::string author;
    std::string moderator;
    std::string board;
    std::string relabel;

    static PromptTemplates defaults();
};

namespace default_templates {

inline constexpr const char* kValidator = R"(You are reviewing a possible vulnerable code clone.

Candidate function:
{candidate_code}

Known vulnerable function ({cwe_ids}):
{kb_code}

Vulnerability description:
{description}

Decide whether the candidate shares the genuine vulnerability pattern of the
known function, not merely a syntactic resemblance. Explain briefly, then
answer on its own line with exactly one of:
MATCH: TRUE
MATCH: FALSE
)";

inline constexpr const char* kResearcher = R"(You are a security researcher presenting the case that the following code is vulnerable.

Code under review:
{candidate_code}

Evidence from earlier analysis:
{prior_evidence}

Deliberation so far:
{transcript_so_far}

Present your strongest argument that this code is vulnerable, citing concrete lines and behavior.
)";

inline constexpr const char* kAuthor = R"(You are the author of the following code, defending it against a vulnerability claim.

Code under review:
{candidate_code}

Deliberation so far:
{transcript_so_far}

Argue why the flagged pattern is intentional or safe. Address the researcher's specific points.
)";

inline constexpr const char* kModerator = R"(You are the moderator of a code-review deliberation.

Code under review:
{candidate_code}

Full exchange:
{transcript_so_far}

Distill the exchange into an impartial, fact-focused summary of the key points raised by both sides. Do not take a side.
)";

inline constexpr const char* kBoard = R"(You are the review board deciding whether the following code is vulnerable.

Code under review:
{candidate_code}

Moderator summary of the deliberation:
{summary}

Issue the final verdict. Reply with these lines:
VERDICT: VULNERABLE or VERDICT: SAFE
CONFIDENCE: <number between 0 and 1>
CWE: <comma-separated CWE tags, omit if none>
followed by a short rationale.
)";

inline constexpr const char* kRelabel = R"(Decide whether the following function is vulnerable or safe.

{candidate_code}

Explain briefly, then answer on its own line with exactly one of:
LABEL: VULNERABLE
LABEL: SAFE
)";

} // namespace default_templates

inline PromptTemplates PromptTemplates::defaults() {
    PromptTemplates t;
    t.validator = default_templates::kValidator;
    t.researcher = default_templates::kResearcher;
    t.author = default_templates::kAuthor;
    t.moderator = default_templates::kModerator;
    t.board = default_templates::kBoard;
    t.relabel = default_templates::kRelabel;
    return t;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io-error", "cannot read '" + path + "'");
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

} // namespace gauntlet
