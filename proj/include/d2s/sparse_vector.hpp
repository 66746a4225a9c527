#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "d2s/errors.hpp"

namespace d2s {

struct TermWeight {
    std::uint32_t term = 0;
    float weight = 0.0f;

    friend bool operator==(const TermWeight&, const TermWeight&) = default;
};

// Nonnegative weighted bag of vocabulary terms. Entries are sorted by term id
// and strictly positive; zeros are never materialized.
struct SparseVector {
    std::uint32_t dim = 0;
    std::vector<TermWeight> entries;

    std::size_t nnz() const { return entries.size(); }

    friend bool operator==(const SparseVector&, const SparseVector&) = default;
};

// Keeps entries whose stored f32 weight is > threshold (default 0), sorted
// by term id. The comparison runs on the f32 value so no zero weight can
// slip in through narrowing.
inline SparseVector sparsify(std::span<const double> row, double threshold = 0.0) {
    SparseVector v;
    v.dim = static_cast<std::uint32_t>(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
        const float w = static_cast<float>(row[j]);
        if (static_cast<double>(w) > threshold) {
            v.entries.push_back({static_cast<std::uint32_t>(j), w});
        }
    }
    return v;
}

inline std::vector<double> densify(const SparseVector& v) {
    std::vector<double> row(v.dim, 0.0);
    for (const auto& e : v.entries) {
        if (e.term >= v.dim) {
            throw DataError("densify: term id " + std::to_string(e.term) +
                            " out of range for dimension " + std::to_string(v.dim));
        }
        row[e.term] = e.weight;
    }
    return row;
}

// f64 dot product of two sparse vectors via sorted-merge; contributions are
// accumulated in ascending term order. `matched`, when given, receives the
// number of shared terms so callers can tell "no overlap" from "score zero".
inline double sparse_dot(const SparseVector& a, const SparseVector& b,
                         std::size_t* matched = nullptr) {
    double acc = 0.0;
    std::size_t hits = 0;
    std::size_t i = 0, j = 0;
    while (i < a.entries.size() && j < b.entries.size()) {
        const std::uint32_t ta = a.entries[i].term;
        const std::uint32_t tb = b.entries[j].term;
        if (ta == tb) {
            acc += static_cast<double>(a.entries[i].weight) * static_cast<double>(b.entries[j].weight);
            ++hits;
            ++i;
            ++j;
        } else if (ta < tb) {
            ++i;
        } else {
            ++j;
        }
    }
    if (matched != nullptr) {
        *matched = hits;
    }
    return acc;
}

}  // namespace d2s
