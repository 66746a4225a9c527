#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "d2s/errors.hpp"
#include "d2s/io_util.hpp"
#include "d2s/matrix.hpp"
#include "d2s/ranking.hpp"
#include "d2s/sparse_vector.hpp"

namespace d2s {

struct Posting {
    std::uint32_t doc_id = 0;
    float weight = 0.0f;

    friend bool operator==(const Posting&, const Posting&) = default;
};

// Immutable term -> postings map over a fixed document collection. Documents
// are addressed by their ordinal in build order; postings are sorted by
// doc id and weights are positive.
struct InvertedIndex {
    std::uint32_t vocab_size = 0;
    std::uint32_t doc_count = 0;
    std::vector<std::vector<Posting>> postings;  // one list per term, possibly empty
    std::vector<float> max_weight;               // 0 for terms with no postings

    std::uint64_t postings_count() const {
        std::uint64_t total = 0;
        for (const auto& list : postings) {
            total += list.size();
        }
        return total;
    }
};

struct RankedList {
    std::string query_id;
    std::vector<ScoredId> entries;  // descending score, ties by ascending doc id
};

// `ids`, when provided, are the external document names aligned with `docs`;
// they only participate in duplicate detection here.
inline InvertedIndex build_index(std::span<const SparseVector> docs,
                                 std::span<const std::string> ids = {}) {
    if (!ids.empty() && ids.size() != docs.size()) {
        throw ShapeError("build_index: " + std::to_string(ids.size()) + " ids for " +
                         std::to_string(docs.size()) + " documents");
    }
    if (!ids.empty()) {
        std::unordered_set<std::string> seen;
        for (const auto& id : ids) {
            if (!seen.insert(id).second) {
                throw DataError("build_index: duplicate doc id \"" + id + "\"");
            }
        }
    }
    InvertedIndex index;
    index.doc_count = static_cast<std::uint32_t>(docs.size());
    for (const auto& d : docs) {
        if (index.vocab_size == 0) {
            index.vocab_size = d.dim;
        } else if (d.dim != index.vocab_size) {
            throw ShapeError("build_index: vocabulary size " + std::to_string(d.dim) +
                             " differs from " + std::to_string(index.vocab_size));
        }
    }
    index.postings.assign(index.vocab_size, {});
    index.max_weight.assign(index.vocab_size, 0.0f);
    for (std::uint32_t doc = 0; doc < docs.size(); ++doc) {
        for (const auto& e : docs[doc].entries) {
            if (e.term >= index.vocab_size) {
                throw DataError("build_index: term id " + std::to_string(e.term) +
                                " out of range in doc " + std::to_string(doc));
            }
            index.postings[e.term].push_back({doc, e.weight});
            index.max_weight[e.term] = std::max(index.max_weight[e.term], e.weight);
        }
    }
    // docs were visited in ascending ordinal order, so each list is already
    // sorted by doc id with no duplicates
    return index;
}

// Exact top-k by sparse dot product, term-at-a-time. Scores accumulate in
// ascending term order per document — the same addition sequence the
// sorted-merge dot product performs, so results are bit-identical to the
// brute-force scan.
inline RankedList search(const InvertedIndex& index, const SparseVector& q, std::size_t k) {
    if (k < 1) {
        throw ConfigError("search: k must be >= 1");
    }
    if (q.dim != index.vocab_size && q.nnz() > 0) {
        throw ShapeError("search: query vocabulary " + std::to_string(q.dim) +
                         " differs from index " + std::to_string(index.vocab_size));
    }
    std::vector<double> acc(index.doc_count, 0.0);
    std::vector<std::uint8_t> touched(index.doc_count, 0);
    std::vector<std::uint32_t> candidates;
    for (const auto& e : q.entries) {
        const double qw = static_cast<double>(e.weight);
        for (const Posting& p : index.postings[e.term]) {
            acc[p.doc_id] += qw * static_cast<double>(p.weight);
            if (!touched[p.doc_id]) {
                touched[p.doc_id] = 1;
                candidates.push_back(p.doc_id);
            }
        }
    }
    RankedList out;
    out.entries.reserve(candidates.size());
    for (std::uint32_t doc : candidates) {
        out.entries.push_back({doc, acc[doc]});
    }
    keep_top_k(out.entries, k);
    return out;
}

inline RankedList brute_force_search(std::span<const SparseVector> docs, const SparseVector& q,
                                     std::size_t k) {
    if (k < 1) {
        throw ConfigError("brute_force_search: k must be >= 1");
    }
    RankedList out;
    for (std::uint32_t doc = 0; doc < docs.size(); ++doc) {
        std::size_t matched = 0;
        const double score = sparse_dot(q, docs[doc], &matched);
        if (matched > 0) {
            out.entries.push_back({doc, score});
        }
    }
    keep_top_k(out.entries, k);
    return out;
}

namespace detail {

// Exact score of one document against the query: walk the query terms in
// ascending order and binary-search each postings list. Addition order equals
// the sorted-merge dot product, keeping scores bit-identical across search
// paths. Returns the number of matched terms through `matched` if non-null.
inline double score_doc(const InvertedIndex& index, const SparseVector& q, std::uint32_t doc,
                        std::size_t* matched = nullptr) {
    double acc = 0.0;
    std::size_t hits = 0;
    for (const auto& e : q.entries) {
        const auto& list = index.postings[e.term];
        auto it = std::lower_bound(list.begin(), list.end(), doc,
                                   [](const Posting& p, std::uint32_t d) { return p.doc_id < d; });
        if (it != list.end() && it->doc_id == doc) {
            acc += static_cast<double>(e.weight) * static_cast<double>(it->weight);
            ++hits;
        }
    }
    if (matched != nullptr) {
        *matched = hits;
    }
    return acc;
}

}  // namespace detail

// Top-k with dynamic list skipping. Query terms are ranked by their maximum
// possible contribution; once the running k-th score exceeds the combined
// bound of the weakest lists, documents appearing only in those lists cannot
// reach the top-k (strictly — ties never cross the pruning boundary) and are
// skipped. Every surviving candidate is rescored exactly, so the result is
// identical to `search` including scores.
inline RankedList search_maxscore(const InvertedIndex& index, const SparseVector& q,
                                  std::size_t k) {
    if (k < 1) {
        throw ConfigError("search_maxscore: k must be >= 1");
    }
    if (q.dim != index.vocab_size && q.nnz() > 0) {
        throw ShapeError("search_maxscore: query vocabulary " + std::to_string(q.dim) +
                         " differs from index " + std::to_string(index.vocab_size));
    }
    struct TermState {
        const std::vector<Posting>* list;
        double bound;        // query weight x max posting weight
        double query_weight;
        std::size_t cursor = 0;
    };
    std::vector<TermState> terms;
    for (const auto& e : q.entries) {
        const auto& list = index.postings[e.term];
        if (!list.empty()) {
            terms.push_back({&list,
                             static_cast<double>(e.weight) *
                                 static_cast<double>(index.max_weight[e.term]),
                             static_cast<double>(e.weight)});
        }
    }
    RankedList out;
    if (terms.empty()) {
        return out;
    }
    // weakest lists first; prefix sums give the best score reachable using
    // only the first j lists
    std::sort(terms.begin(), terms.end(), [](const TermState& a, const TermState& b) {
        if (a.bound != b.bound) {
            return a.bound < b.bound;
        }
        return a.list < b.list;
    });
    std::vector<double> prefix_bound(terms.size() + 1, 0.0);
    for (std::size_t j = 0; j < terms.size(); ++j) {
        prefix_bound[j + 1] = prefix_bound[j] + terms[j].bound;
    }

    // `top` holds the best k seen so far; worst element tracked linearly
    // (k is small in practice)
    std::vector<ScoredId> top;
    auto kth_score = [&]() {
        if (top.size() < k) {
            return -std::numeric_limits<double>::infinity();
        }
        double worst = std::numeric_limits<double>::infinity();
        for (const auto& s : top) {
            worst = std::min(worst, s.score);
        }
        return worst;
    };
    auto offer = [&](std::uint32_t doc, double score) {
        if (top.size() < k) {
            top.push_back({doc, score});
            return;
        }
        // replace the worst under the shared tie rule
        std::size_t worst = 0;
        for (std::size_t i = 1; i < top.size(); ++i) {
            if (ranks_before(top[worst], top[i])) {
                worst = i;
            }
        }
        if (ranks_before({doc, score}, top[worst])) {
            top[worst] = {doc, score};
        }
    };

    std::size_t first_essential = 0;  // lists below this bound index are prunable
    while (true) {
        const double threshold = kth_score();
        while (first_essential < terms.size() &&
               prefix_bound[first_essential + 1] < threshold) {
            ++first_essential;
        }
        if (first_essential >= terms.size()) {
            break;  // every list pruned: nothing left can beat the k-th score
        }
        // next document = min current doc id over essential lists
        std::uint32_t next_doc = std::numeric_limits<std::uint32_t>::max();
        bool any = false;
        for (std::size_t j = first_essential; j < terms.size(); ++j) {
            const TermState& t = terms[j];
            if (t.cursor < t.list->size()) {
                next_doc = std::min(next_doc, (*t.list)[t.cursor].doc_id);
                any = true;
            }
        }
        if (!any) {
            break;
        }
        offer(next_doc, detail::score_doc(index, q, next_doc));
        for (std::size_t j = first_essential; j < terms.size(); ++j) {
            TermState& t = terms[j];
            while (t.cursor < t.list->size() && (*t.list)[t.cursor].doc_id <= next_doc) {
                ++t.cursor;
            }
        }
    }
    out.entries = std::move(top);
    keep_top_k(out.entries, k);
    return out;
}

struct TwoStageStats {
    std::uint64_t stage1_products = 0;  // postings touched while retrieving the pool
    std::uint64_t stage2_products = 0;  // term matches during rescoring
    std::uint32_t pool_size = 0;
};

// Retrieve with the query restricted to `original_terms`, then rescore the
// candidate pool with the full query. Documents matching only expansion
// terms are unreachable by design; callers wanting full coverage should use
// `search` directly.
inline RankedList search_two_stage(const InvertedIndex& index, const SparseVector& q_full,
                                   const std::vector<std::uint32_t>& original_terms,
                                   std::size_t k, std::size_t pool_size,
                                   TwoStageStats* stats = nullptr) {
    if (k < 1) {
        throw ConfigError("search_two_stage: k must be >= 1");
    }
    if (pool_size < k) {
        throw ConfigError("search_two_stage: pool size " + std::to_string(pool_size) +
                          " smaller than k " + std::to_string(k));
    }
    std::unordered_set<std::uint32_t> original(original_terms.begin(), original_terms.end());
    SparseVector q_restricted;
    q_restricted.dim = q_full.dim;
    for (const auto& e : q_full.entries) {
        if (original.contains(e.term)) {
            q_restricted.entries.push_back(e);
        }
    }
    if (stats != nullptr) {
        *stats = {};
        for (const auto& e : q_restricted.entries) {
            stats->stage1_products += index.postings[e.term].size();
        }
    }
    RankedList pool = search(index, q_restricted, pool_size);
    RankedList out;
    out.entries.reserve(pool.entries.size());
    for (const auto& cand : pool.entries) {
        std::size_t matched = 0;
        const double score = detail::score_doc(index, q_full, cand.id, &matched);
        if (stats != nullptr) {
            stats->stage2_products += matched;
        }
        out.entries.push_back({cand.id, score});
    }
    if (stats != nullptr) {
        stats->pool_size = static_cast<std::uint32_t>(pool.entries.size());
    }
    keep_top_k(out.entries, k);
    return out;
}

// Exact dot-product scan over dense document rows; every document is ranked,
// scores may be negative.
inline RankedList dense_search(const Matrix& docs, std::span<const double> query, std::size_t k) {
    if (k < 1) {
        throw ConfigError("dense_search: k must be >= 1");
    }
    if (docs.cols != query.size()) {
        throw ShapeError("dense_search: query dimension " + std::to_string(query.size()) +
                         " differs from documents " + std::to_string(docs.cols));
    }
    RankedList out;
    out.entries.reserve(docs.rows);
    for (std::uint32_t doc = 0; doc < docs.rows; ++doc) {
        const double* row = docs.row(doc);
        double acc = 0.0;
        for (std::size_t j = 0; j < docs.cols; ++j) {
            acc += row[j] * query[j];
        }
        out.entries.push_back({doc, acc});
    }
    keep_top_k(out.entries, k);
    return out;
}

inline void save_index(const InvertedIndex& index, const std::string& path) {
    BinaryWriter w(path);
    w.write_magic("D2SI");
    w.write_u32(1);
    w.write_u32(index.vocab_size);
    w.write_u32(index.doc_count);
    w.write_u64(index.postings_count());
    for (std::uint32_t term = 0; term < index.vocab_size; ++term) {
        const auto& list = index.postings[term];
        if (list.empty()) {
            continue;
        }
        w.write_u32(term);
        w.write_u32(static_cast<std::uint32_t>(list.size()));
        w.write_f32(index.max_weight[term]);
        for (const Posting& p : list) {
            w.write_u32(p.doc_id);
            w.write_f32(p.weight);
        }
    }
    w.commit();
}

inline InvertedIndex load_index(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic("D2SI");
    r.expect_version(1);
    InvertedIndex index;
    index.vocab_size = r.read_u32("vocab size");
    index.doc_count = r.read_u32("doc count");
    const std::uint64_t expected_postings = r.read_u64("postings count");
    index.postings.assign(index.vocab_size, {});
    index.max_weight.assign(index.vocab_size, 0.0f);
    std::uint64_t total = 0;
    std::int64_t prev_term = -1;
    while (total < expected_postings) {
        const std::uint32_t term = r.read_u32("term id");
        if (term >= index.vocab_size) {
            throw FormatError(path + ": term id " + std::to_string(term) +
                              " out of range for vocabulary " + std::to_string(index.vocab_size));
        }
        if (static_cast<std::int64_t>(term) <= prev_term) {
            throw FormatError(path + ": term ids not strictly ascending at term " +
                              std::to_string(term));
        }
        prev_term = term;
        const std::uint32_t length = r.read_u32("postings length");
        if (length == 0) {
            throw FormatError(path + ": zero-length postings list for term " +
                              std::to_string(term));
        }
        const float stored_max = r.read_f32("max weight");
        auto& list = index.postings[term];
        list.resize(length);
        float recomputed_max = 0.0f;
        std::int64_t prev_doc = -1;
        for (std::uint32_t i = 0; i < length; ++i) {
            list[i].doc_id = r.read_u32("posting doc id");
            list[i].weight = r.read_f32("posting weight");
            if (list[i].doc_id >= index.doc_count) {
                throw FormatError(path + ": doc id " + std::to_string(list[i].doc_id) +
                                  " out of range for " + std::to_string(index.doc_count) +
                                  " documents");
            }
            if (static_cast<std::int64_t>(list[i].doc_id) <= prev_doc) {
                throw FormatError(path + ": postings for term " + std::to_string(term) +
                                  " not strictly ascending by doc id");
            }
            prev_doc = list[i].doc_id;
            if (!(list[i].weight > 0.0f) || !std::isfinite(list[i].weight)) {
                throw FormatError(path + ": non-positive weight in postings for term " +
                                  std::to_string(term));
            }
            recomputed_max = std::max(recomputed_max, list[i].weight);
        }
        if (recomputed_max != stored_max) {
            throw FormatError(path + ": stored max weight for term " + std::to_string(term) +
                              " does not match postings");
        }
        index.max_weight[term] = stored_max;
        total += length;
    }
    if (!r.at_eof()) {
        throw FormatError(path + ": trailing bytes after postings payload");
    }
    return index;
}

// Retrieval run line: external string ids, 1-based ranks.
struct RunLine {
    std::string query_id;
    std::string doc_id;
    std::uint32_t rank = 0;
    double score = 0.0;

    friend bool operator==(const RunLine&, const RunLine&) = default;
};

inline void write_run(const std::vector<RunLine>& lines, const std::string& path) {
    std::ostringstream body;
    char buf[64];
    for (const auto& line : lines) {
        std::snprintf(buf, sizeof(buf), "%.17g", line.score);
        body << line.query_id << '\t' << line.doc_id << '\t' << line.rank << '\t' << buf << '\n';
    }
    write_text_atomic(body.str(), path);
}

inline std::vector<RunLine> read_run(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError(path + ": cannot open");
    }
    std::vector<RunLine> lines;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (raw.empty()) {
            continue;
        }
        RunLine line;
        std::istringstream fields(raw);
        std::string rank_s, score_s;
        if (!std::getline(fields, line.query_id, '\t') ||
            !std::getline(fields, line.doc_id, '\t') || !std::getline(fields, rank_s, '\t') ||
            !std::getline(fields, score_s)) {
            throw FormatError(path + ": line " + std::to_string(line_no) +
                              ": expected query_id<TAB>doc_id<TAB>rank<TAB>score");
        }
        try {
            line.rank = static_cast<std::uint32_t>(std::stoul(rank_s));
            line.score = std::stod(score_s);
        } catch (const std::exception&) {
            throw FormatError(path + ": line " + std::to_string(line_no) +
                              ": malformed rank or score");
        }
        lines.push_back(std::move(line));
    }
    return lines;
}

}  // namespace d2s
