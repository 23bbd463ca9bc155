#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "gauntlet/error.hpp"

// Unified diff parsing. Captures enough per hunk to map every added line to
// its post-change line number and to re-apply a hunk to the pre-image.

namespace gauntlet {

struct AddedLine {
    int line = 0; // 1-based post-change line number
    std::string text;

    bool operator==(const AddedLine&) const = default;
};

struct Hunk {
    int old_start = 0;
    int old_count = 0;
    int new_start = 0;
    int new_count = 0;
    std::vector<AddedLine> added;   // post-change numbering, strictly increasing
    std::vector<int> deleted;       // old-file numbering, strictly increasing

    std::vector<int> added_line_numbers() const {
        std::vector<int> out;
        out.reserve(added.size());
        for (const AddedLine& a : added) out.push_back(a.line);
        return out;
    }

    bool operator==(const Hunk&) const = default;
};

struct FileChange {
    std::string file_path; // post-change path
    std::vector<Hunk> hunks;

    std::vector<int> added_line_numbers() const {
        std::vector<int> out;
        for (const Hunk& h : hunks) {
            for (const AddedLine& a : h.added) out.push_back(a.line);
        }
        return out;
    }

    bool operator==(const FileChange&) const = default;
};

namespace detail {

inline std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    size_t start = 0;
    while (start <= text.size()) {
        size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < text.size()) lines.emplace_back(text.substr(start));
            break;
        }
        std::string line(text.substr(start, nl - start));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        start = nl + 1;
    }
    return lines;
}

inline std::string strip_diff_prefix(std::string_view path) {
    if (path.size() >= 2 && (path.substr(0, 2) == "a/" || path.substr(0, 2) == "b/")) {
        return std::string(path.substr(2));
    }
    return std::string(path);
}

// "@@ -a[,b] +c[,d] @@ ..." with counts defaulting to 1 when omitted.
inline bool parse_hunk_header(const std::string& line, int line_no, Hunk& hunk) {
    if (line.rfind("@@ -", 0) != 0) return false;
    size_t pos = 4;
    auto read_int = [&](int& out) {
        size_t begin = pos;
        while (pos < line.size() && line[pos] >= '0' && line[pos] <= '9') ++pos;
        if (pos == begin) {
            throw Error("malformed-diff",
                        "non-numeric hunk header field at line " + std::to_string(line_no));
        }
        out = std::stoi(line.substr(begin, pos - begin));
    };
    read_int(hunk.old_start);
    hunk.old_count = 1;
    if (pos < line.size() && line[pos] == ',') {
        ++pos;
        read_int(hunk.old_count);
    }
    if (pos >= line.size() || line[pos] != ' ') {
        throw Error("malformed-diff", "bad hunk header at line " + std::to_string(line_no));
    }
    ++pos;
    if (pos >= line.size() || line[pos] != '+') {
        throw Error("malformed-diff", "bad hunk header at line " + std::to_string(line_no));
    }
    ++pos;
    read_int(hunk.new_start);
    hunk.new_count = 1;
    if (pos < line.size() && line[pos] == ',') {
        ++pos;
        read_int(hunk.new_count);
    }
    if (line.find(" @@", pos) != pos) {
        throw Error("malformed-diff", "bad hunk header at line " + std::to_string(line_no));
    }
    return true;
}

} // namespace detail

inline std::vector<FileChange> parse_unified_diff(std::string_view text) {
    std::vector<FileChange> changes;
    std::vector<std::string> lines = detail::split_lines(text);

    FileChange current;
    bool file_open = false;
    std::string pending_old_path;

    auto flush = [&] {
        if (file_open) changes.push_back(std::move(current));
        current = FileChange{};
        file_open = false;
    };

    size_t i = 0;
    while (i < lines.size()) {
        const std::string& line = lines[i];
        int line_no = static_cast<int>(i) + 1;

        if (line.rfind("--- ", 0) == 0) {
            pending_old_path = detail::strip_diff_prefix(line.substr(4));
            ++i;
            continue;
        }
        if (line.rfind("+++ ", 0) == 0) {
            flush();
            std::string path = line.substr(4);
            // Deleted files have a null post path; fall back to the old one so
            // the change is still reported (it carries no added lines).
            current.file_path =
                path == "/dev/null" ? pending_old_path : detail::strip_diff_prefix(path);
            file_open = true;
            ++i;
            continue;
        }

        Hunk hunk;
        if (detail::parse_hunk_header(line, line_no, hunk)) {
            if (!file_open) {
                throw Error("malformed-diff",
                            "hunk header before any file header at line " + std::to_string(line_no));
            }
            int old_line = hunk.old_start;
            int new_line = hunk.new_start;
            int old_used = 0;
            int new_used = 0;
            ++i;
            while (old_used < hunk.old_count || new_used < hunk.new_count) {
                if (i >= lines.size()) {
                    throw Error("malformed-diff", "hunk body shorter than header counts (hunk at line " +
                                                      std::to_string(line_no) + ")");
                }
                const std::string& body = lines[i];
                if (body.rfind("\\", 0) == 0) {
                    ++i; // "\ No newline at end of file"
                    continue;
                }
                char tag = body.empty() ? ' ' : body[0];
                if (tag == ' ') {
                    if (old_used >= hunk.old_count || new_used >= hunk.new_count) {
                        throw Error("malformed-diff", "hunk body exceeds header counts at line " +
                                                          std::to_string(i + 1));
                    }
                    ++old_line;
                    ++new_line;
                    ++old_used;
                    ++new_used;
                } else if (tag == '-') {
                    if (old_used >= hunk.old_count) {
                        throw Error("malformed-diff", "hunk body exceeds header counts at line " +
                                                          std::to_string(i + 1));
                    }
                    hunk.deleted.push_back(old_line);
                    ++old_line;
                    ++old_used;
                } else if (tag == '+') {
                    if (new_used >= hunk.new_count) {
                        throw Error("malformed-diff", "hunk body exceeds header counts at line " +
                                                          std::to_string(i + 1));
                    }
                    hunk.added.push_back({new_line, body.substr(1)});
                    ++new_line;
                    ++new_used;
                } else {
                    throw Error("malformed-diff", "hunk body shorter than header counts (unexpected line " +
                                                      std::to_string(i + 1) + ")");
                }
                ++i;
            }
            current.hunks.push_back(std::move(hunk));
            continue;
        }

        // Anything else ("diff --git", "index ...", leading prose) is skipped.
        ++i;
    }
    flush();
    return changes;
}

// Re-applies one file's captured hunks to its pre-image. Used to check that
// parsing is lossless for added-line positions and content.
inline std::vector<std::string> apply_file_change(const FileChange& change,
                                                  const std::vector<std::string>& pre_lines) {
    std::vector<std::string> post;
    size_t pre_index = 0; // 0-based index into pre_lines

    for (const Hunk& hunk : change.hunks) {
        // A pure-insertion hunk ("@@ -N,0 ...") names the line the insertion
        // follows rather than the first line it covers, so the copy runs
        // through line N instead of stopping before it.
        size_t hunk_pre_begin =
            hunk.old_count == 0
                ? static_cast<size_t>(hunk.old_start)
                : (hunk.old_start == 0 ? 0 : static_cast<size_t>(hunk.old_start - 1));
        while (pre_index < hunk_pre_begin && pre_index < pre_lines.size()) {
            post.push_back(pre_lines[pre_index++]);
        }
        size_t deleted_cursor = 0;
        int old_line = hunk.old_start;
        int new_line = hunk.new_start;
        size_t added_cursor = 0;
        int old_used = 0;
        int new_used = 0;
        while (old_used < hunk.old_count || new_used < hunk.new_count) {
            bool is_added = added_cursor < hunk.added.size() &&
                            hunk.added[added_cursor].line == new_line && new_used < hunk.new_count;
            if (is_added) {
                post.push_back(hunk.added[added_cursor].text);
                ++added_cursor;
                ++new_line;
                ++new_used;
                continue;
            }
            bool is_deleted = deleted_cursor < hunk.deleted.size() &&
                              hunk.deleted[deleted_cursor] == old_line;
            if (is_deleted) {
                ++deleted_cursor;
                ++old_line;
                ++old_used;
                ++pre_index;
                continue;
            }
            // Context line: copied from the pre-image.
            if (pre_index >= pre_lines.size()) {
                throw Error("inconsistent-input", "hunk extends past the pre-image");
            }
            post.push_back(pre_lines[pre_index++]);
            ++old_line;
            ++new_line;
            ++old_used;
            ++new_used;
        }
    }
    while (pre_index < pre_lines.size()) post.push_back(pre_lines[pre_index++]);
    return post;
}

} // namespace gauntlet
