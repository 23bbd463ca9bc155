#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gauntlet/core.hpp"
#include "gauntlet/error.hpp"

// Known-vulnerability knowledge base: one JSON record per line, validated on
// load. Records may arrive without embeddings; the matcher materializes those
// lazily before the first search.

namespace gauntlet {

struct KnowledgeBase {
    std::vector<VulnRecord> records;
    int dimension = 256;

    bool operator==(const KnowledgeBase&) const = default;
};

inline json to_json(const VulnRecord& r) {
    json j{{"kb_id", r.kb_id},
           {"origin", to_string(r.origin)},
           {"cwe_ids", r.cwe_ids},
           {"vulnerable_code", r.vulnerable_code},
           {"description", r.description}};
    if (r.fixed_code) j["fixed_code"] = *r.fixed_code;
    if (r.embedding) j["embedding"] = *r.embedding;
    return j;
}

inline VulnRecord vuln_record_from_json(const json& j) {
    detail::require_known_fields(j,
                                 {"kb_id", "origin", "cwe_ids", "vulnerable_code", "fixed_code",
                                  "description", "embedding"},
                                 "kb record");
    VulnRecord r;
    r.kb_id = j.at("kb_id").get<std::string>();
    r.origin = kb_origin_from_string(j.at("origin").get<std::string>());
    r.cwe_ids = j.at("cwe_ids").get<std::vector<std::string>>();
    r.vulnerable_code = j.at("vulnerable_code").get<std::string>();
    if (j.contains("fixed_code")) r.fixed_code = j.at("fixed_code").get<std::string>();
    r.description = j.at("description").get<std::string>();
    if (j.contains("embedding")) r.embedding = j.at("embedding").get<std::vector<double>>();
    return r;
}

namespace detail {

inline void validate_vuln_record(const VulnRecord& r, int dimension, int line_no) {
    auto fail = [&](const std::string& why) {
        throw Error("malformed-record", "kb record '" + r.kb_id + "' (line " +
                                            std::to_string(line_no) + "): " + why);
    };
    if (r.kb_id.empty()) fail("kb_id is empty");
    if (r.vulnerable_code.empty()) fail("vulnerable_code is empty");
    for (const std::string& tag : r.cwe_ids) {
        if (!is_valid_cwe(tag)) fail("invalid CWE tag '" + tag + "'");
    }
    if (r.embedding) {
        if (static_cast<int>(r.embedding->size()) != dimension) {
            fail("embedding dimension " + std::to_string(r.embedding->size()) + " != " +
                 std::to_string(dimension));
        }
        double norm_sq = 0.0;
        for (double v : *r.embedding) norm_sq += v * v;
        if (std::fabs(std::sqrt(norm_sq) - 1.0) > 1e-6) fail("embedding is not unit norm");
    }
}

} // namespace detail

inline KnowledgeBase read_knowledge_base(std::istream& in, int dimension = 256) {
    KnowledgeBase kb;
    kb.dimension = dimension;
    std::map<std::string, int> seen; // kb_id -> first line number
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
                        "kb line " + std::to_string(line_no) + ": " + e.what());
        }
        VulnRecord record = vuln_record_from_json(j);
        detail::validate_vuln_record(record, dimension, line_no);
        auto [it, inserted] = seen.emplace(record.kb_id, line_no);
        if (!inserted) {
            throw Error("duplicate-record", "kb_id '" + record.kb_id + "' appears at lines " +
                                                std::to_string(it->second) + " and " +
                                                std::to_string(line_no));
        }
        kb.records.push_back(std::move(record));
    }
    return kb;
}

inline KnowledgeBase load_knowledge_base(const std::string& path, int dimension = 256) {
    std::ifstream in(path);
    if (!in) throw Error("io-error", "cannot read knowledge base '" + path + "'");
    return read_knowledge_base(in, dimension);
}

inline void write_knowledge_base(std::ostream& out, const KnowledgeBase& kb) {
    for (const VulnRecord& r : kb.records) out << to_json(r).dump() << '\n';
}

inline void save_knowledge_base(const std::string& path, const KnowledgeBase& kb) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io-error", "cannot write knowledge base '" + path + "'");
    write_knowledge_base(out, kb);
}

} // namespace gauntlet
