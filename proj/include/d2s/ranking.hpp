#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

namespace d2s {

// One (id, score) pair. The ordering key used everywhere — over documents in
// retrieval and over terms in top-k weight selection — is score descending,
// id ascending on ties.
struct ScoredId {
    std::uint32_t id = 0;
    double score = 0.0;

    friend bool operator==(const ScoredId&, const ScoredId&) = default;
};

inline bool ranks_before(const ScoredId& a, const ScoredId& b) {
    if (a.score != b.score) {
        return a.score > b.score;
    }
    return a.id < b.id;
}

// Reorders `items` so the first min(k, n) elements are the top-k under the
// shared tie rule, in final rank order, and truncates to that prefix.
inline void keep_top_k(std::vector<ScoredId>& items, std::size_t k) {
    if (items.size() > k) {
        std::partial_sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(k),
                          items.end(), ranks_before);
        items.resize(k);
    } else {
        std::sort(items.begin(), items.end(), ranks_before);
    }
}

}  // namespace d2s
