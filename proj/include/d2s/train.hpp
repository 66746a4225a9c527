#pragma once

#include <chrono>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "d2s/adam.hpp"
#include "d2s/data_io.hpp"
#include "d2s/errors.hpp"
#include "d2s/expansion.hpp"
#include "d2s/loss.hpp"
#include "d2s/matrix.hpp"
#include "d2s/metrics.hpp"
#include "d2s/projection.hpp"
#include "d2s/rng.hpp"
#include "d2s/sparse_vector.hpp"

namespace d2s {

// Which expansion-control regime the caption side trains under.
//  controlled:   scheduled caption and word gates (the full mechanism)
//  always_off:   caption gate pinned shut; outputs confined to caption terms
//  always_on:    all gates pinned open; unconstrained expansion
//  caption_only: scheduled caption gate, word gates pinned open
enum class ExpansionMode { controlled, always_off, always_on, caption_only };

inline const char* to_string(ExpansionMode m) {
    switch (m) {
        case ExpansionMode::controlled: return "controlled";
        case ExpansionMode::always_off: return "always_off";
        case ExpansionMode::always_on: return "always_on";
        case ExpansionMode::caption_only: return "caption_only";
    }
    return "?";
}

inline ExpansionMode expansion_mode_from_string(const std::string& s) {
    if (s == "controlled") return ExpansionMode::controlled;
    if (s == "always_off") return ExpansionMode::always_off;
    if (s == "always_on") return ExpansionMode::always_on;
    if (s == "caption_only") return ExpansionMode::caption_only;
    throw ConfigError("unknown expansion mode \"" + s + "\"");
}

struct TrainConfig {
    double temperature = 0.001;     // softmax temperature over dense scores
    double mix = 0.5;               // blend between similarity loss and regularizer
    double sparsity_weight = 1e-3;  // L1 pressure on sparse outputs
    std::size_t epochs = 50;
    std::size_t batch_size = 128;
    AdamConfig adam;
    std::uint64_t seed = 0;
    ExpansionMode expansion_mode = ExpansionMode::controlled;
    TermGating term_gating = TermGating::keep_always;
    std::size_t hidden_dim = 64;
    std::size_t vocab_size = 0;    // 0 = derive from caption term ids
    bool normalize_dense = false;  // L2-normalize dense vectors before targets
    bool hard_labels = false;      // identity targets instead of dense softmax
    bool select_best = false;      // keep the epoch with best validation MRR@10
    bool init_w2_from_embeddings = false;

    void validate() const {
        if (temperature <= 0.0) {
            throw ConfigError("train: temperature must be > 0");
        }
        if (mix < 0.0 || mix > 1.0) {
            throw ConfigError("train: loss mix must be in [0, 1]");
        }
        if (sparsity_weight < 0.0) {
            throw ConfigError("train: sparsity weight must be >= 0");
        }
        if (epochs == 0) {
            throw ConfigError("train: epochs must be >= 1");
        }
        if (batch_size < 2) {
            throw ConfigError("train: batch size must be >= 2 (in-batch negatives)");
        }
    }
};

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;      // row-weighted mean over batches
    double p_caption = 0.0; // caption-gate probability in effect this epoch
    double mean_caption_density = 0.0;  // nnz fraction of masked caption rows
    double mean_image_density = 0.0;    // nnz fraction of image rows
    double valid_mrr_at_10 = -1.0;      // -1 when not measured
    std::int64_t elapsed_ms = 0;

    nlohmann::json to_json() const {
        nlohmann::json j{{"epoch", epoch},
                         {"loss", loss},
                         {"p_c", p_caption},
                         {"mean_caption_density", mean_caption_density},
                         {"mean_image_density", mean_image_density},
                         {"elapsed_ms", elapsed_ms}};
        if (valid_mrr_at_10 >= 0.0) {
            j["valid_mrr_at_10"] = valid_mrr_at_10;
        }
        return j;
    }
};

struct TrainResult {
    ProjectionParams params;
    std::vector<EpochStats> log;
    std::size_t selected_epoch = 0;  // 1-based epoch the checkpoint comes from
    ProjectionParams best_params;    // snapshot used when selecting on validation
};

namespace detail {

inline Matrix gather_rows(const Matrix& source, const std::vector<std::size_t>& rows,
                          std::span<const std::size_t> order) {
    Matrix out(order.size(), source.cols);
    for (std::size_t i = 0; i < order.size(); ++i) {
        const double* src = source.row(rows[order[i]]);
        std::copy(src, src + source.cols, out.row(i));
    }
    return out;
}

inline double density(const Matrix& batch) {
    std::size_t nnz = 0;
    for (double v : batch.data) {
        nnz += (v != 0.0);
    }
    return static_cast<double>(nnz) / static_cast<double>(batch.size());
}

// Mean reciprocal rank over a validation split, pairing each caption with
// its one relevant image; sparse scores, shared tie rule.
inline double validation_mrr(const ProjectionParams& params, const Dataset& valid) {
    if (valid.size() == 0) {
        throw DataError("validation: empty split");
    }
    // encode distinct validation images once
    std::vector<std::size_t> image_rows;
    std::vector<std::size_t> pair_image;  // caption -> position in image_rows
    {
        std::unordered_map<std::size_t, std::size_t> seen;
        for (std::size_t i = 0; i < valid.size(); ++i) {
            auto [it, inserted] = seen.try_emplace(valid.image_row[i], image_rows.size());
            if (inserted) {
                image_rows.push_back(valid.image_row[i]);
            }
            pair_image.push_back(it->second);
        }
    }
    Matrix image_batch(image_rows.size(), valid.image_dense->vectors.cols);
    for (std::size_t i = 0; i < image_rows.size(); ++i) {
        const double* src = valid.image_dense->vectors.row(image_rows[i]);
        std::copy(src, src + image_batch.cols, image_batch.row(i));
    }
    Matrix image_sparse = project_forward(params, image_batch);
    std::vector<SparseVector> docs(image_rows.size());
    for (std::size_t i = 0; i < image_rows.size(); ++i) {
        docs[i] = sparsify(std::span<const double>(image_sparse.row(i), image_sparse.cols));
    }

    Matrix caption_batch(valid.size(), valid.caption_dense->vectors.cols);
    for (std::size_t i = 0; i < valid.size(); ++i) {
        const double* src = valid.caption_dense->vectors.row(valid.caption_row[i]);
        std::copy(src, src + caption_batch.cols, caption_batch.row(i));
    }
    Matrix caption_sparse = project_forward(params, caption_batch);

    double total_rr = 0.0;
    for (std::size_t q = 0; q < valid.size(); ++q) {
        SparseVector query =
            sparsify(std::span<const double>(caption_sparse.row(q), caption_sparse.cols));
        std::vector<ScoredId> scored;
        scored.reserve(docs.size());
        for (std::uint32_t d = 0; d < docs.size(); ++d) {
            scored.push_back({d, sparse_dot(query, docs[d])});
        }
        keep_top_k(scored, 10);
        for (std::size_t r = 0; r < scored.size(); ++r) {
            if (scored[r].id == pair_image[q]) {
                total_rr += 1.0 / static_cast<double>(r + 1);
                break;
            }
        }
    }
    return total_rr / static_cast<double>(valid.size());
}

}  // namespace detail

// The full training loop: seeded shuffle into batches, per-batch masks,
// masked caption expansion, bidirectional distillation loss, shared-head
// backward, one optimizer step per batch, schedule step per epoch.
// `log_stream`, when given, receives one JSON object per epoch.
inline TrainResult train(const Dataset& dataset, const TrainConfig& cfg,
                         const Dataset* valid = nullptr, std::ostream* log_stream = nullptr,
                         const Matrix* init_embeddings = nullptr) {
    cfg.validate();
    if (cfg.select_best && valid == nullptr) {
        throw ConfigError("train: select_best needs a validation split");
    }
    if (dataset.size() == 0) {
        throw DataError("train: empty dataset");
    }
    if (dataset.caption_dense->vectors.cols != dataset.image_dense->vectors.cols) {
        throw ShapeError("train: caption and image dense dimensions differ");
    }
    const std::size_t input_dim = dataset.caption_dense->vectors.cols;

    std::size_t derived_vocab = 0;
    std::vector<std::vector<std::uint32_t>> caption_terms(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        caption_terms[i] = dataset.captions[i].term_ids;
        for (std::uint32_t t : caption_terms[i]) {
            derived_vocab = std::max<std::size_t>(derived_vocab, t + 1);
        }
    }
    if (init_embeddings != nullptr) {
        derived_vocab = std::max(derived_vocab, init_embeddings->rows);
    }
    std::size_t vocab_size = cfg.vocab_size != 0 ? cfg.vocab_size : derived_vocab;
    if (derived_vocab > vocab_size) {
        throw DataError("train: caption term ids need a vocabulary of " +
                        std::to_string(derived_vocab) + ", configured size is " +
                        std::to_string(vocab_size));
    }
    if (vocab_size == 0) {
        throw DataError("train: no caption terms anywhere; vocabulary is empty");
    }

    // dense inputs, optionally L2-normalized once up front
    Matrix dense_captions = dataset.caption_dense->vectors;
    Matrix dense_images = dataset.image_dense->vectors;
    if (cfg.normalize_dense) {
        for (Matrix* m : {&dense_captions, &dense_images}) {
            for (std::size_t i = 0; i < m->rows; ++i) {
                double* row = m->row(i);
                double norm_sq = 0.0;
                for (std::size_t j = 0; j < m->cols; ++j) {
                    norm_sq += row[j] * row[j];
                }
                if (!(norm_sq > 0.0)) {
                    throw DataError("train: zero dense vector at row " + std::to_string(i));
                }
                const double inv = 1.0 / std::sqrt(norm_sq);
                for (std::size_t j = 0; j < m->cols; ++j) {
                    row[j] *= inv;
                }
            }
        }
    }

    TrainResult result;
    result.params = init_params(input_dim, cfg.hidden_dim, vocab_size, cfg.seed,
                                cfg.init_w2_from_embeddings ? init_embeddings : nullptr);

    std::vector<double> df = compute_df(caption_terms, vocab_size);
    ExpansionSchedule schedule = init_schedule(df, cfg.epochs);

    DistillLossConfig loss_cfg;
    loss_cfg.temperature = cfg.temperature;
    loss_cfg.mix = cfg.mix;
    loss_cfg.sparsity_weight = cfg.sparsity_weight;
    loss_cfg.hard_labels = cfg.hard_labels;

    AdamState state_w1(result.params.w1.size());
    AdamState state_gamma(result.params.hidden_dim);
    AdamState state_beta(result.params.hidden_dim);
    AdamState state_w2(result.params.w2.size());

    Rng mask_rng(derive_seed(cfg.seed, "masks"));
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    double best_valid = -1.0;
    using clock = std::chrono::steady_clock;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto epoch_start = clock::now();
        Rng order_rng(derive_seed(cfg.seed, "order-" + std::to_string(epoch)));
        order_rng.shuffle(order);

        EpochStats stats;
        stats.epoch = epoch;
        // report the caption-gate probability actually in effect this epoch
        switch (cfg.expansion_mode) {
            case ExpansionMode::always_off: stats.p_caption = 0.0; break;
            case ExpansionMode::always_on: stats.p_caption = 1.0; break;
            default: stats.p_caption = schedule.p_caption; break;
        }
        double loss_sum = 0.0, caption_density_sum = 0.0, image_density_sum = 0.0;
        std::size_t rows_seen = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, order.size() - start);
            std::span<const std::size_t> batch_order(order.data() + start, b);
            // sampling happens before the short-batch check so the mask
            // stream is one draw per formed batch
            ExpansionMask mask;
            switch (cfg.expansion_mode) {
                case ExpansionMode::controlled:
                    mask = sample_mask(schedule, mask_rng);
                    break;
                case ExpansionMode::always_off:
                    mask = constant_mask(vocab_size, true);
                    mask.caption_gate = 0;
                    break;
                case ExpansionMode::always_on:
                    mask = constant_mask(vocab_size, true);
                    break;
                case ExpansionMode::caption_only:
                    mask = sample_mask(schedule, mask_rng);
                    std::fill(mask.word_gate.begin(), mask.word_gate.end(), std::uint8_t{1});
                    break;
            }
            if (b < 2) {
                continue;  // a lone remainder row has no in-batch negatives
            }

            Matrix zc = detail::gather_rows(dense_captions, dataset.caption_row, batch_order);
            Matrix zi = detail::gather_rows(dense_images, dataset.image_row, batch_order);
            std::vector<std::vector<std::uint32_t>> batch_terms(b);
            for (std::size_t i = 0; i < b; ++i) {
                batch_terms[i] = caption_terms[batch_order[i]];
            }

            ForwardCache cache_c, cache_i;
            Matrix sc = project_forward(result.params, zc, &cache_c);
            Matrix si = project_forward(result.params, zi, &cache_i);
            Matrix sc_masked = expand(batch_terms, sc, mask, cfg.term_gating);

            DistillLossResult loss = distill_loss(sc_masked, si, zc, zi, loss_cfg);
            Matrix dsc = expand_backward(batch_terms, loss.dcaption, mask, cfg.term_gating);

            ProjectionGrads grads = project_backward(result.params, cache_c, dsc,
                                                     /*compute_dinput=*/false);
            ProjectionGrads grads_i = project_backward(result.params, cache_i, loss.dimage,
                                                       /*compute_dinput=*/false);
            grads.add(grads_i);

            adam_step(result.params.w1.data, grads.dw1.data, state_w1, cfg.adam, "w1");
            adam_step(result.params.gamma, grads.dgamma, state_gamma, cfg.adam, "gamma");
            adam_step(result.params.beta, grads.dbeta, state_beta, cfg.adam, "beta");
            adam_step(result.params.w2.data, grads.dw2.data, state_w2, cfg.adam, "w2");

            const double bd = static_cast<double>(b);
            loss_sum += loss.loss * bd;
            caption_density_sum += detail::density(sc_masked) * bd;
            image_density_sum += detail::density(si) * bd;
            rows_seen += b;
        }

        if (rows_seen == 0) {
            throw DataError("train: no trainable batch (need >= 2 rows)");
        }
        stats.loss = loss_sum / static_cast<double>(rows_seen);
        stats.mean_caption_density = caption_density_sum / static_cast<double>(rows_seen);
        stats.mean_image_density = image_density_sum / static_cast<double>(rows_seen);

        step_schedule(schedule);

        // validation is priced per epoch, so only best-epoch selection pays it
        if (valid != nullptr && cfg.select_best) {
            stats.valid_mrr_at_10 = detail::validation_mrr(result.params, *valid);
            if (stats.valid_mrr_at_10 > best_valid) {
                best_valid = stats.valid_mrr_at_10;
                result.selected_epoch = epoch;
            }
        }
        if (!cfg.select_best) {
            result.selected_epoch = epoch;
        }

        stats.elapsed_ms = std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() -
                                                                                 epoch_start)
                               .count();
        result.log.push_back(stats);
        if (log_stream != nullptr) {
            (*log_stream) << stats.to_json().dump() << '\n';
            log_stream->flush();
        }
        if (cfg.select_best && result.selected_epoch == epoch) {
            result.best_params = result.params;
        }
    }

    if (cfg.select_best && result.selected_epoch != cfg.epochs) {
        result.params = result.best_params;
    }
    return result;
}

}  // namespace d2s
