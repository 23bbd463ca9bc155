#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gauntlet/error.hpp"
#include "gauntlet/kb.hpp"

// Deterministic bag-of-tokens embedder and the exact top-k cosine search over
// the knowledge base. The embedder is the reference mock used by every test:
// split on non-alphanumeric characters, lowercase, FNV-1a 64-bit per token,
// bucket modulo the dimension, count, L2-normalize. A flat scan is exact and
// oracle-checkable; swapping in an approximate index later only needs the
// same (query, kb, k, min_similarity) surface.

namespace gauntlet {

inline constexpr int kDefaultEmbeddingDimension = 256;

namespace detail {

inline constexpr std::uint64_t kFnvOffsetBasis = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a64(std::string_view token) {
    std::uint64_t h = kFnvOffsetBasis;
    for (char c : token) {
        h ^= static_cast<unsigned char>(c);
        h *= kFnvPrime;
    }
    return h;
}

inline bool is_token_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

} // namespace detail

inline std::vector<double> embed(std::string_view text,
                                 int dimension = kDefaultEmbeddingDimension) {
    std::vector<double> buckets(static_cast<size_t>(dimension), 0.0);
    bool any_token = false;
    size_t i = 0;
    while (i < text.size()) {
        if (!detail::is_token_char(text[i])) {
            ++i;
            continue;
        }
        size_t start = i;
        while (i < text.size() && detail::is_token_char(text[i])) ++i;
        std::string token(text.substr(start, i - start));
        for (char& c : token) {
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        }
        buckets[detail::fnv1a64(token) % static_cast<std::uint64_t>(dimension)] += 1.0;
        any_token = true;
    }
    if (!any_token) {
        throw Error("empty-input", "cannot embed text with no tokens");
    }
    double norm_sq = 0.0;
    for (double v : buckets) norm_sq += v * v;
    double norm = std::sqrt(norm_sq);
    for (double& v : buckets) v /= norm;
    return buckets;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw Error("inconsistent-input", "cosine of vectors with different dimensions");
    }
    double dot = 0.0;
    for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return dot;
}

struct MatchHit {
    std::string kb_id;
    double similarity = 0.0;

    bool operator==(const MatchHit&) const = default;
};

// Fills in any missing record embeddings from vulnerable_code. Call once
// before sharing the kb across search workers; search itself is read-only.
inline void materialize_embeddings(KnowledgeBase& kb) {
    for (VulnRecord& r : kb.records) {
        if (!r.embedding) r.embedding = embed(r.vulnerable_code, kb.dimension);
    }
}

inline std::vector<MatchHit> top_k_similar(const std::vector<double>& query,
                                           const KnowledgeBase& kb, int k,
                                           double min_similarity) {
    if (k < 1) throw Error("inconsistent-input", "top_k_similar requires k >= 1");
    std::vector<MatchHit> hits;
    for (const VulnRecord& r : kb.records) {
        if (!r.embedding) {
            throw Error("inconsistent-input",
                        "kb record '" + r.kb_id + "' has no embedding; materialize first");
        }
        double sim = cosine(query, *r.embedding);
        if (sim >= min_similarity) hits.push_back({r.kb_id, sim});
    }
    std::sort(hits.begin(), hits.end(), [](const MatchHit& a, const MatchHit& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.kb_id < b.kb_id;
    });
    if (static_cast<int>(hits.size()) > k) hits.resize(static_cast<size_t>(k));
    return hits;
}

} // namespace gauntlet
