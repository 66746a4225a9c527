#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "d2s/errors.hpp"
#include "d2s/matrix.hpp"
#include "d2s/ranking.hpp"
#include "d2s/sparse_index.hpp"
#include "d2s/sparse_vector.hpp"

namespace d2s {

// Mean number of co-activated dimensions per caption-image pair, computed
// exactly through per-term support counts: sum_t nC(t)*nI(t) / (|C|*|I|).
// Counting in u64 makes this identical to the all-pairs double loop.
inline double flops(std::span<const SparseVector> captions, std::span<const SparseVector> images) {
    if (captions.empty() || images.empty()) {
        throw DataError("flops: empty collection");
    }
    std::uint32_t vocab = 0;
    for (const auto& v : captions) {
        vocab = std::max(vocab, v.dim);
    }
    for (const auto& v : images) {
        vocab = std::max(vocab, v.dim);
    }
    for (const auto& v : captions) {
        if (v.dim != vocab) {
            throw ShapeError("flops: caption vocabulary " + std::to_string(v.dim) +
                             " differs from " + std::to_string(vocab));
        }
    }
    for (const auto& v : images) {
        if (v.dim != vocab) {
            throw ShapeError("flops: image vocabulary " + std::to_string(v.dim) +
                             " differs from " + std::to_string(vocab));
        }
    }
    std::vector<std::uint64_t> caption_support(vocab, 0), image_support(vocab, 0);
    for (const auto& v : captions) {
        for (const auto& e : v.entries) {
            ++caption_support[e.term];
        }
    }
    for (const auto& v : images) {
        for (const auto& e : v.entries) {
            ++image_support[e.term];
        }
    }
    std::uint64_t numerator = 0;
    for (std::uint32_t t = 0; t < vocab; ++t) {
        numerator += caption_support[t] * image_support[t];
    }
    return static_cast<double>(numerator) /
           (static_cast<double>(captions.size()) * static_cast<double>(images.size()));
}

// Top-k terms of a sparse vector under the shared (weight desc, id asc) rule.
inline std::vector<std::uint32_t> top_k_terms(const SparseVector& s, std::size_t k) {
    std::vector<ScoredId> scored;
    scored.reserve(s.nnz());
    for (const auto& e : s.entries) {
        scored.push_back({e.term, static_cast<double>(e.weight)});
    }
    keep_top_k(scored, k);
    std::vector<std::uint32_t> terms;
    terms.reserve(scored.size());
    for (const auto& sc : scored) {
        terms.push_back(sc.id);
    }
    return terms;
}

// Fraction of the k strongest output terms that appear in the caption itself.
// The denominator stays k even when the vector has fewer than k nonzeros.
inline double exact_at_k(const std::vector<std::uint32_t>& caption_terms, const SparseVector& s,
                         std::size_t k) {
    if (k < 1) {
        throw ConfigError("exact_at_k: k must be >= 1");
    }
    std::unordered_set<std::uint32_t> caption(caption_terms.begin(), caption_terms.end());
    std::size_t hits = 0;
    for (std::uint32_t t : top_k_terms(s, k)) {
        hits += caption.contains(t);
    }
    return static_cast<double>(hits) / static_cast<double>(k);
}

// Term-embedding table with rows normalized to unit length, so cosine
// similarity reduces to a dot product.
struct StaticEmbeddingTable {
    Matrix vectors;  // |V| x width

    static StaticEmbeddingTable from_raw(Matrix raw) {
        for (std::size_t i = 0; i < raw.rows; ++i) {
            double norm_sq = 0.0;
            double* row = raw.row(i);
            for (std::size_t j = 0; j < raw.cols; ++j) {
                norm_sq += row[j] * row[j];
            }
            if (!(norm_sq > 0.0) || !std::isfinite(norm_sq)) {
                throw DataError("embedding table: row " + std::to_string(i) +
                                " cannot be normalized");
            }
            const double inv = 1.0 / std::sqrt(norm_sq);
            for (std::size_t j = 0; j < raw.cols; ++j) {
                row[j] *= inv;
            }
        }
        return {std::move(raw)};
    }

    double cosine(std::uint32_t a, std::uint32_t b) const {
        const double* ra = vectors.row(a);
        const double* rb = vectors.row(b);
        double acc = 0.0;
        for (std::size_t j = 0; j < vectors.cols; ++j) {
            acc += ra[j] * rb[j];
        }
        return acc;
    }
};

// Mean over the k strongest output terms of the best cosine similarity to any
// caption term.
inline double semantic_at_k(const std::vector<std::uint32_t>& caption_terms,
                            const SparseVector& s, std::size_t k,
                            const StaticEmbeddingTable& emb) {
    if (k < 1) {
        throw ConfigError("semantic_at_k: k must be >= 1");
    }
    if (caption_terms.empty()) {
        throw DataError("semantic_at_k: empty caption term set");
    }
    std::vector<std::uint32_t> top = top_k_terms(s, k);
    std::vector<std::uint32_t> missing;
    for (std::uint32_t t : top) {
        if (t >= emb.vectors.rows) {
            missing.push_back(t);
        }
    }
    for (std::uint32_t t : caption_terms) {
        if (t >= emb.vectors.rows) {
            missing.push_back(t);
        }
    }
    if (!missing.empty()) {
        std::string ids;
        for (std::uint32_t t : missing) {
            ids += (ids.empty() ? "" : ", ") + std::to_string(t);
        }
        throw DataError("semantic_at_k: no embedding for term ids " + ids);
    }
    double total = 0.0;
    for (std::uint32_t t : top) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::uint32_t u : caption_terms) {
            best = std::max(best, emb.cosine(t, u));
        }
        total += best;
    }
    return total / static_cast<double>(k);
}

// query id -> set of relevant doc ids; every query has at least one.
struct Qrels {
    std::map<std::string, std::set<std::string>> relevant;

    void add(const std::string& query, const std::string& doc) { relevant[query].insert(doc); }
};

// Ranked doc ids per query, ordered by ascending rank.
using RunByQuery = std::map<std::string, std::vector<std::string>>;

inline RunByQuery group_run(const std::vector<RunLine>& lines) {
    std::map<std::string, std::vector<std::pair<std::uint32_t, std::string>>> tmp;
    for (const auto& line : lines) {
        tmp[line.query_id].push_back({line.rank, line.doc_id});
    }
    RunByQuery run;
    for (auto& [query, docs] : tmp) {
        std::sort(docs.begin(), docs.end());
        auto& ordered = run[query];
        ordered.reserve(docs.size());
        for (auto& [rank, doc] : docs) {
            ordered.push_back(std::move(doc));
        }
    }
    return run;
}

// Per-query recall in qrels key order (sorted by query id).
inline std::vector<double> per_query_recall_at_k(const RunByQuery& run, const Qrels& qrels,
                                                 std::size_t k) {
    if (k < 1) {
        throw ConfigError("recall_at_k: k must be >= 1");
    }
    std::vector<double> out;
    out.reserve(qrels.relevant.size());
    for (const auto& [query, relevant] : qrels.relevant) {
        auto it = run.find(query);
        if (it == run.end()) {
            throw DataError("recall_at_k: query \"" + query + "\" missing from run");
        }
        const auto& ranked = it->second;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
            hits += relevant.contains(ranked[i]);
        }
        out.push_back(static_cast<double>(hits) / static_cast<double>(relevant.size()));
    }
    return out;
}

inline double recall_at_k(const RunByQuery& run, const Qrels& qrels, std::size_t k) {
    std::vector<double> per = per_query_recall_at_k(run, qrels, k);
    if (per.empty()) {
        throw DataError("recall_at_k: no queries in qrels");
    }
    double total = 0.0;
    for (double v : per) {
        total += v;
    }
    return total / static_cast<double>(per.size());
}

// Per-query reciprocal rank of the first relevant doc within the top 10,
// zero when none appears there; qrels key order.
inline std::vector<double> per_query_mrr_at_10(const RunByQuery& run, const Qrels& qrels) {
    std::vector<double> out;
    out.reserve(qrels.relevant.size());
    for (const auto& [query, relevant] : qrels.relevant) {
        auto it = run.find(query);
        if (it == run.end()) {
            throw DataError("mrr_at_10: query \"" + query + "\" missing from run");
        }
        const auto& ranked = it->second;
        double rr = 0.0;
        for (std::size_t i = 0; i < std::min<std::size_t>(10, ranked.size()); ++i) {
            if (relevant.contains(ranked[i])) {
                rr = 1.0 / static_cast<double>(i + 1);
                break;
            }
        }
        out.push_back(rr);
    }
    return out;
}

inline double mrr_at_10(const RunByQuery& run, const Qrels& qrels) {
    std::vector<double> per = per_query_mrr_at_10(run, qrels);
    if (per.empty()) {
        throw DataError("mrr_at_10: no queries in qrels");
    }
    double total = 0.0;
    for (double v : per) {
        total += v;
    }
    return total / static_cast<double>(per.size());
}

// Standard product-moment correlation; throws when either side has zero
// variance (the coefficient is undefined there).
inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw ShapeError("pearson: length mismatch " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
    }
    if (x.size() < 2) {
        throw DataError("pearson: need at least 2 points");
    }
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) {
        throw NumericError("pearson: undefined correlation, zero variance input");
    }
    return sxy / std::sqrt(sxx * syy);
}

// |top_k(a) ∩ top_k(b)| / k over ordinal doc ids.
inline double overlap_at_k(const RankedList& a, const RankedList& b, std::size_t k) {
    if (k < 1) {
        throw ConfigError("overlap_at_k: k must be >= 1");
    }
    std::unordered_set<std::uint32_t> in_a;
    for (std::size_t i = 0; i < std::min(k, a.entries.size()); ++i) {
        in_a.insert(a.entries[i].id);
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, b.entries.size()); ++i) {
        hits += in_a.contains(b.entries[i].id);
    }
    return static_cast<double>(hits) / static_cast<double>(k);
}

}  // namespace d2s
