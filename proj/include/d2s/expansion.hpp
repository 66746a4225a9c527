#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "d2s/errors.hpp"
#include "d2s/matrix.hpp"
#include "d2s/rng.hpp"

namespace d2s {

// df[t] = fraction of captions containing term t at least once.
inline std::vector<double> compute_df(const std::vector<std::vector<std::uint32_t>>& captions,
                                      std::size_t vocab_size) {
    if (captions.empty()) {
        throw DataError("compute_df: empty caption collection");
    }
    std::vector<std::uint64_t> counts(vocab_size, 0);
    std::vector<std::uint8_t> seen(vocab_size, 0);
    for (const auto& caption : captions) {
        for (std::uint32_t t : caption) {
            if (t >= vocab_size) {
                throw DataError("compute_df: term id " + std::to_string(t) +
                                " out of range for vocabulary of size " + std::to_string(vocab_size));
            }
            if (!seen[t]) {
                seen[t] = 1;
                counts[t] += 1;
            }
        }
        for (std::uint32_t t : caption) {
            seen[t] = 0;
        }
    }
    std::vector<double> df(vocab_size);
    const double n = static_cast<double>(captions.size());
    for (std::size_t t = 0; t < vocab_size; ++t) {
        df[t] = static_cast<double>(counts[t]) / n;
    }
    return df;
}

// Per-epoch expansion probabilities. Starts fully closed at the caption
// level (p_c = 0) and closed proportionally to document frequency at the
// word level (p_v = 1 - df); after total_epochs steps every probability
// reaches 1.
struct ExpansionSchedule {
    double p_caption = 0.0;
    std::vector<double> p_word;
    std::vector<double> df;
    std::size_t total_epochs = 0;
};

inline ExpansionSchedule init_schedule(std::vector<double> df, std::size_t total_epochs) {
    for (double v : df) {
        if (v < 0.0 || v > 1.0) {
            throw DataError("init_schedule: document frequency outside [0,1]");
        }
    }
    ExpansionSchedule s;
    s.total_epochs = total_epochs;
    s.p_caption = 0.0;
    s.p_word.resize(df.size());
    for (std::size_t i = 0; i < df.size(); ++i) {
        s.p_word[i] = 1.0 - df[i];
    }
    s.df = std::move(df);
    return s;
}

// p_c += 1/epochs, p_v[i] += df[i]/epochs, both clamped at 1.
inline void step_schedule(ExpansionSchedule& s) {
    const double e = static_cast<double>(s.total_epochs);
    s.p_caption = std::min(1.0, s.p_caption + 1.0 / e);
    for (std::size_t i = 0; i < s.p_word.size(); ++i) {
        s.p_word[i] = std::min(1.0, s.p_word[i] + s.df[i] / e);
    }
}

// One Bernoulli draw per batch: a caption-level gate plus a per-term gate.
struct ExpansionMask {
    std::uint8_t caption_gate = 1;
    std::vector<std::uint8_t> word_gate;
};

inline ExpansionMask sample_mask(const ExpansionSchedule& s, Rng& rng) {
    ExpansionMask m;
    m.caption_gate = rng.bernoulli(s.p_caption) ? 1 : 0;
    m.word_gate.resize(s.p_word.size());
    for (std::size_t i = 0; i < s.p_word.size(); ++i) {
        m.word_gate[i] = rng.bernoulli(s.p_word[i]) ? 1 : 0;
    }
    return m;
}

inline ExpansionMask constant_mask(std::size_t vocab_size, bool open) {
    ExpansionMask m;
    m.caption_gate = open ? 1 : 0;
    m.word_gate.assign(vocab_size, 1);
    return m;
}

// How weights on terms that DO occur in the caption are treated:
//   keep_always - original caption terms always survive (default);
//   word_gated  - original terms are also multiplied by their word gate.
enum class TermGating { keep_always, word_gated };

// Masks expansion terms out of a batch of caption projections. For a row
// with caption terms X: weights on terms outside X are multiplied by
// caption_gate * word_gate[k]; weights on terms inside X are kept (or
// word-gated, depending on the policy). Never increases any weight.
inline Matrix expand(const std::vector<std::vector<std::uint32_t>>& caption_terms,
                     const Matrix& caption_batch, const ExpansionMask& mask,
                     TermGating gating = TermGating::keep_always) {
    const std::size_t vocab_size = caption_batch.cols;
    if (caption_terms.size() != caption_batch.rows) {
        throw ShapeError("expand: caption term rows do not match batch rows");
    }
    if (mask.word_gate.size() != vocab_size) {
        throw ShapeError("expand: word gate length does not match vocabulary size");
    }
    Matrix out = caption_batch;
    std::vector<std::uint8_t> in_caption(vocab_size, 0);
    for (std::size_t i = 0; i < caption_batch.rows; ++i) {
        for (std::uint32_t t : caption_terms[i]) {
            if (t >= vocab_size) {
                throw DataError("expand: term id " + std::to_string(t) +
                                " out of range for vocabulary of size " + std::to_string(vocab_size));
            }
            in_caption[t] = 1;
        }
        double* row = out.row(i);
        for (std::size_t k = 0; k < vocab_size; ++k) {
            double multiplier;
            if (in_caption[k]) {
                multiplier = gating == TermGating::keep_always
                                 ? 1.0
                                 : static_cast<double>(mask.word_gate[k]);
            } else {
                multiplier = static_cast<double>(mask.caption_gate) *
                             static_cast<double>(mask.word_gate[k]);
            }
            row[k] *= multiplier;
        }
        for (std::uint32_t t : caption_terms[i]) {
            in_caption[t] = 0;
        }
    }
    return out;
}

// The mask multipliers are constants during a batch, so the backward pass is
// the same elementwise product applied to the upstream gradient.
inline Matrix expand_backward(const std::vector<std::vector<std::uint32_t>>& caption_terms,
                              const Matrix& dmasked, const ExpansionMask& mask,
                              TermGating gating = TermGating::keep_always) {
    return expand(caption_terms, dmasked, mask, gating);
}

}  // namespace d2s
