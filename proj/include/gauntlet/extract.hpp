#pragma once

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "gauntlet/core.hpp"
#include "gauntlet/diff.hpp"
#include "gauntlet/error.hpp"

// Locates the smallest enclosing function for each added line of a file
// change. Brace-delimited languages get a lexing brace matcher, offside-rule
// languages an indentation-block matcher; everything else (and every line no
// function encloses) falls back to a +/- hunk_window slice of the file.
//
// These are deliberate approximations, not parsers: good enough to hand a
// model a self-contained unit of code, cheap enough to run on every commit.

namespace gauntlet {

namespace detail {

inline const std::set<std::string>& brace_extensions() {
    static const std::set<std::string> exts{"c",  "cc",  "cpp", "cxx", "h",  "hh",   "hpp",
                                            "hxx", "java", "js",  "jsx", "ts", "tsx",  "cs",
                                            "go", "rs",  "php", "kt",  "m",  "mm",   "scala",
                                            "swift"};
    return exts;
}

inline const std::set<std::string>& indent_extensions() {
    static const std::set<std::string> exts{"py", "pyi"};
    return exts;
}

inline std::string extension_of(std::string_view path) {
    size_t slash = path.find_last_of('/');
    std::string_view name = slash == std::string_view::npos ? path : path.substr(slash + 1);
    size_t dot = name.find_last_of('.');
    if (dot == std::string_view::npos || dot + 1 == name.size()) return "";
    std::string ext(name.substr(dot + 1));
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

// Replaces comment bodies and string/char literal contents with spaces while
// preserving line structure, so brace matching and header scanning never trip
// over braces in text.
inline std::string sanitize_brace_source(std::string_view source) {
    std::string out(source);
    enum class State { Code, LineComment, BlockComment, String, Char };
    State state = State::Code;
    bool escaped = false;
    for (size_t i = 0; i < source.size(); ++i) {
        char c = source[i];
        char next = i + 1 < source.size() ? source[i + 1] : '\0';
        switch (state) {
            case State::Code:
                if (c == '/' && next == '/') {
                    state = State::LineComment;
                    out[i] = ' ';
                } else if (c == '/' && next == '*') {
                    state = State::BlockComment;
                    out[i] = ' ';
                } else if (c == '"') {
                    state = State::String;
                    out[i] = ' ';
                    escaped = false;
                } else if (c == '\'') {
                    state = State::Char;
                    out[i] = ' ';
                    escaped = false;
                }
                break;
            case State::LineComment:
                if (c == '\n') {
                    state = State::Code;
                } else {
                    out[i] = ' ';
                }
                break;
            case State::BlockComment:
                if (c == '*' && next == '/') {
                    out[i] = ' ';
                    out[i + 1] = ' ';
                    ++i;
                    state = State::Code;
                } else if (c != '\n') {
                    out[i] = ' ';
                }
                break;
            case State::String:
            case State::Char: {
                char quote = state == State::String ? '"' : '\'';
                if (escaped) {
                    escaped = false;
                    if (c != '\n') out[i] = ' ';
                } else if (c == '\\') {
                    escaped = true;
                    out[i] = ' ';
                } else if (c == quote) {
                    out[i] = ' ';
                    state = State::Code;
                } else if (c != '\n') {
                    out[i] = ' ';
                }
                break;
            }
        }
    }
    return out;
}

inline bool is_identifier_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

inline bool is_header_keyword(std::string_view word) {
    static const std::set<std::string, std::less<>> keywords{
        "if", "for", "while", "switch", "catch", "return", "do", "else", "sizeof"};
    return keywords.count(word) > 0;
}

struct BracePair {
    size_t open_pos;
    size_t close_pos;
    int open_line;  // 1-based
    int close_line; // 1-based
};

// Matched pairs in open order; nullopt when braces are unbalanced.
inline std::optional<std::vector<BracePair>> match_braces(const std::string& sanitized) {
    std::vector<BracePair> pairs;
    std::vector<std::pair<size_t, int>> stack; // (pos, line)
    int line = 1;
    for (size_t i = 0; i < sanitized.size(); ++i) {
        char c = sanitized[i];
        if (c == '\n') {
            ++line;
        } else if (c == '{') {
            stack.push_back({i, line});
        } else if (c == '}') {
            if (stack.empty()) return std::nullopt;
            pairs.push_back({stack.back().first, i, stack.back().second, line});
            stack.pop_back();
        }
    }
    if (!stack.empty()) return std::nullopt;
    return pairs;
}

// The nearest preceding line that reads like a function header: scan back
// from the open brace to the previous ';', '{' or '}' (capped at 20 lines)
// and look for an identifier immediately followed by '(' that is not a
// control-flow keyword. Returns the 1-based line the header region starts on.
inline std::optional<int> find_function_header(const std::string& sanitized, size_t open_pos,
                                               int open_line) {
    size_t region_begin = 0;
    int lines_back = 0;
    for (size_t i = open_pos; i > 0; --i) {
        char c = sanitized[i - 1];
        if (c == ';' || c == '{' || c == '}') {
            region_begin = i;
            break;
        }
        if (c == '\n' && ++lines_back >= 20) {
            region_begin = i;
            break;
        }
    }

    std::string_view region(sanitized.data() + region_begin, open_pos - region_begin);
    bool found_header = false;
    for (size_t i = 0; i < region.size();) {
        if (is_identifier_char(region[i]) && !(region[i] >= '0' && region[i] <= '9')) {
            size_t start = i;
            while (i < region.size() && is_identifier_char(region[i])) ++i;
            std::string_view word = region.substr(start, i - start);
            size_t after = i;
            while (after < region.size() &&
                   (region[after] == ' ' || region[after] == '\t')) {
                ++after;
            }
            if (after < region.size() && region[after] == '(' && !is_header_keyword(word)) {
                found_header = true;
            }
        } else {
            ++i;
        }
    }
    if (!found_header) return std::nullopt;

    // Header region starts on the line of its first non-whitespace character.
    int line = open_line;
    size_t first_code = std::string::npos;
    for (size_t i = region_begin; i < open_pos; ++i) {
        char c = sanitized[i];
        if (c != ' ' && c != '\t' && c != '\n' && c != '\r') {
            first_code = i;
            break;
        }
    }
    if (first_code == std::string::npos) return open_line;
    line = 1;
    for (size_t i = 0; i < first_code; ++i) {
        if (sanitized[i] == '\n') ++line;
    }
    return line;
}

struct FunctionSpan {
    int start_line;
    int end_line;

    bool operator<(const FunctionSpan& other) const {
        return start_line != other.start_line ? start_line < other.start_line
                                              : end_line < other.end_line;
    }
    bool operator==(const FunctionSpan&) const = default;
};

// All function spans in a brace-language file; nullopt when unbalanced.
inline std::optional<std::vector<FunctionSpan>> brace_function_spans(const std::string& source) {
    std::string sanitized = sanitize_brace_source(source);
    std::optional<std::vector<BracePair>> pairs = match_braces(sanitized);
    if (!pairs) return std::nullopt;
    std::vector<FunctionSpan> spans;
    for (const BracePair& p : *pairs) {
        std::optional<int> header = find_function_header(sanitized, p.open_pos, p.open_line);
        if (header) spans.push_back({*header, p.close_line});
    }
    return spans;
}

inline int indent_width(std::string_view line) {
    int width = 0;
    for (char c : line) {
        if (c == ' ') {
            ++width;
        } else if (c == '\t') {
            width += 8;
        } else {
            break;
        }
    }
    return width;
}

inline bool is_blank(std::string_view line) {
    return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

inline bool is_def_line(std::string_view line) {
    size_t i = line.find_first_not_of(" \t");
    if (i == std::string_view::npos) return false;
    std::string_view rest = line.substr(i);
    if (rest.rfind("async", 0) == 0) {
        rest.remove_prefix(5);
        size_t skip = rest.find_first_not_of(" \t");
        if (skip == std::string_view::npos || skip == 0) return false;
        rest.remove_prefix(skip);
    }
    return rest.rfind("def ", 0) == 0 || rest.rfind("def(", 0) == 0;
}

// Smallest def block containing 1-based target; nullopt when none does.
inline std::optional<FunctionSpan> indent_function_span(const std::vector<std::string>& lines,
                                                        int target) {
    if (target < 1 || target > static_cast<int>(lines.size())) return std::nullopt;

    int header = -1;
    const std::string& target_line = lines[target - 1];
    if (is_def_line(target_line)) {
        header = target;
    } else {
        int limit = is_blank(target_line) ? INT32_MAX : indent_width(target_line);
        for (int i = target - 1; i >= 1; --i) {
            const std::string& line = lines[i - 1];
            if (is_blank(line)) continue;
            int ind = indent_width(line);
            if (ind < limit) {
                if (is_def_line(line)) {
                    header = i;
                    break;
                }
                limit = ind;
                if (limit == 0) break; // reached a top-level non-def statement
            }
        }
    }
    if (header < 0) return std::nullopt;

    int header_indent = indent_width(lines[header - 1]);
    int end = header;
    for (int i = header + 1; i <= static_cast<int>(lines.size()); ++i) {
        const std::string& line = lines[i - 1];
        if (is_blank(line)) continue;
        if (indent_width(line) <= header_indent) break;
        end = i;
    }
    if (target > end) return std::nullopt; // target sits below the block
    return FunctionSpan{header, end};
}

inline std::string join_lines(const std::vector<std::string>& lines, int start, int end) {
    std::string out;
    for (int i = start; i <= end; ++i) {
        out += lines[i - 1];
        if (i != end) out += '\n';
    }
    return out;
}

} // namespace detail

inline std::string make_candidate_id(const std::string& repo, const std::string& commit_id,
                                     const std::string& file_path, int start_line, int end_line) {
    return repo + "@" + commit_id + ":" + file_path + ":" + std::to_string(start_line) + "-" +
           std::to_string(end_line);
}

struct ExtractionContext {
    std::string repo;
    std::string commit_id;
};

inline std::vector<FunctionCandidate> extract_changed_functions(const FileChange& change,
                                                                const std::string& post_source,
                                                                const PipelineConfig& config,
                                                                const ExtractionContext& ctx = {}) {
    if (post_source.empty() && !change.hunks.empty()) {
        throw Error("inconsistent-input",
                    "empty post-change source for '" + change.file_path + "' with nonempty hunks");
    }

    std::vector<int> added = change.added_line_numbers();
    if (added.empty()) return {};

    std::vector<std::string> lines = detail::split_lines(post_source);
    int file_lines = static_cast<int>(lines.size());
    std::string ext = detail::extension_of(change.file_path);

    std::optional<std::vector<detail::FunctionSpan>> brace_spans;
    bool use_brace = detail::brace_extensions().count(ext) > 0;
    bool use_indent = detail::indent_extensions().count(ext) > 0;
    if (use_brace) {
        brace_spans = detail::brace_function_spans(post_source);
        // Unbalanced braces: not an error, every line falls back to hunk_window.
        if (!brace_spans) use_brace = false;
    }

    struct SpanInfo {
        detail::FunctionSpan span;
        ExtractionMethod method;
    };
    std::map<detail::FunctionSpan, ExtractionMethod> selected; // dedup by span

    for (int line : added) {
        std::optional<detail::FunctionSpan> enclosing;
        ExtractionMethod method = ExtractionMethod::HunkWindow;

        if (use_brace) {
            // Smallest span containing the line wins.
            for (const detail::FunctionSpan& s : *brace_spans) {
                if (s.start_line <= line && line <= s.end_line) {
                    if (!enclosing || (s.end_line - s.start_line) <
                                          (enclosing->end_line - enclosing->start_line)) {
                        enclosing = s;
                    }
                }
            }
            if (enclosing) method = ExtractionMethod::Brace;
        } else if (use_indent) {
            enclosing = detail::indent_function_span(lines, line);
            if (enclosing) method = ExtractionMethod::Indent;
        }

        if (!enclosing) {
            int start = std::max(1, line - config.hunk_window);
            int end = std::min(file_lines, line + config.hunk_window);
            if (start > end) continue; // added line beyond a truncated source
            enclosing = detail::FunctionSpan{start, end};
            method = ExtractionMethod::HunkWindow;
        }

        auto it = selected.find(*enclosing);
        if (it == selected.end()) selected.emplace(*enclosing, method);
    }

    std::vector<FunctionCandidate> candidates;
    for (const auto& [span, method] : selected) {
        FunctionCandidate c;
        c.repo = ctx.repo;
        c.commit_id = ctx.commit_id;
        c.file_path = change.file_path;
        c.language_tag = ext;
        c.start_line = span.start_line;
        c.end_line = std::min(span.end_line, file_lines);
        c.source = detail::join_lines(lines, c.start_line, c.end_line);
        c.extraction_method = method;
        c.id = make_candidate_id(c.repo, c.commit_id, c.file_path, c.start_line, c.end_line);
        if (c.source.empty()) continue;
        candidates.push_back(std::move(c));
    }
    // map iteration is already (start_line, end_line) ordered; keep explicit.
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        return a.start_line != b.start_line ? a.start_line < b.start_line
                                            : a.end_line < b.end_line;
    });
    return candidates;
}

// Parses a whole diff and extracts candidates for every changed file, pulling
// post-change sources through the supplied loader. Changes with no added
// lines (pure deletions) are skipped; there is nothing left to analyze.
inline std::vector<FunctionCandidate> assemble_candidates(
    const std::string& diff_text, const std::function<std::string(const std::string&)>& load_source,
    const PipelineConfig& config, const ExtractionContext& ctx = {}) {
    std::vector<FunctionCandidate> all;
    for (const FileChange& change : parse_unified_diff(diff_text)) {
        if (change.added_line_numbers().empty()) continue;
        std::string source = load_source(change.file_path);
        std::vector<FunctionCandidate> extracted =
            extract_changed_functions(change, source, config, ctx);
        all.insert(all.end(), extracted.begin(), extracted.end());
    }
    return all;
}

} // namespace gauntlet
