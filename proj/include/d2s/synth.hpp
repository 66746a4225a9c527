#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "d2s/data_io.hpp"
#include "d2s/errors.hpp"
#include "d2s/matrix.hpp"
#include "d2s/rng.hpp"

namespace d2s {

// Generator for desk-scale retrieval corpora with planted cross-modal
// structure. Every image mixes a few latent topics; captions sample terms
// from those topics; dense vectors live on unit sphere with the image's
// topic mixture as direction, and caption vectors are noisy copies of their
// image's vector. Term embeddings cluster by topic so semantic similarity is
// meaningful. Everything is deterministic per seed.
struct SynthConfig {
    std::uint64_t seed = 0;
    std::size_t n_images = 1000;
    std::size_t captions_per_image = 3;
    std::size_t dim = 64;
    std::size_t vocab_size = 2000;
    std::size_t caption_len = 8;
    double noise = 0.25;  // relative perturbation of caption vectors

    std::size_t n_topics = 16;
    std::size_t embedding_width = 32;
    double term_spread = 0.5;  // within-topic scatter of term embeddings
    std::size_t max_topics_per_image = 3;
    double train_fraction = 0.8;
    double valid_fraction = 0.1;

    void validate() const {
        if (n_images == 0 || captions_per_image == 0 || dim == 0 || vocab_size == 0 ||
            caption_len == 0 || n_topics == 0 || embedding_width == 0) {
            throw ConfigError("synth: all size parameters must be positive");
        }
        if (noise < 0.0) {
            throw ConfigError("synth: noise must be >= 0");
        }
        if (n_topics > dim) {
            throw ConfigError("synth: need dim >= n_topics for an orthonormal topic basis");
        }
        if (n_topics > vocab_size) {
            throw ConfigError("synth: need vocab_size >= n_topics");
        }
        if (max_topics_per_image == 0 || max_topics_per_image > n_topics) {
            throw ConfigError("synth: max_topics_per_image out of range");
        }
        if (train_fraction < 0.0 || valid_fraction < 0.0 ||
            train_fraction + valid_fraction > 1.0) {
            throw ConfigError("synth: split fractions out of range");
        }
    }
};

struct SynthData {
    Vocabulary vocab;
    std::vector<Caption> captions;
    DenseStore caption_dense;
    DenseStore image_dense;
    Matrix embeddings;  // raw term embeddings, |V| x width (normalized on load)
    SplitManifest splits;
    Qrels qrels;  // caption id -> paired image id
};

namespace detail {

inline void normalize_row(double* row, std::size_t n) {
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        norm_sq += row[j] * row[j];
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (std::size_t j = 0; j < n; ++j) {
        row[j] *= inv;
    }
}

// Orthonormal columns via modified Gram-Schmidt on Gaussian draws.
inline Matrix orthonormal_basis(std::size_t dim, std::size_t count, Rng& rng) {
    Matrix basis(count, dim);  // row k = topic direction k
    for (std::size_t k = 0; k < count; ++k) {
        double* row = basis.row(k);
        for (std::size_t j = 0; j < dim; ++j) {
            row[j] = rng.normal();
        }
        for (std::size_t prev = 0; prev < k; ++prev) {
            const double* p = basis.row(prev);
            double dot = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                dot += row[j] * p[j];
            }
            for (std::size_t j = 0; j < dim; ++j) {
                row[j] -= dot * p[j];
            }
        }
        normalize_row(row, dim);
    }
    return basis;
}

}  // namespace detail

inline SynthData synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "synth"));
    SynthData data;

    // vocabulary; term t belongs to topic t % n_topics
    char buf[32];
    data.vocab.terms.reserve(cfg.vocab_size);
    for (std::size_t t = 0; t < cfg.vocab_size; ++t) {
        std::snprintf(buf, sizeof buf, "t%05zu", t);
        data.vocab.terms.push_back(buf);
    }
    auto topic_of = [&](std::size_t term) { return term % cfg.n_topics; };
    auto topic_term_count = [&](std::size_t topic) {
        return (cfg.vocab_size - topic + cfg.n_topics - 1) / cfg.n_topics;
    };

    Matrix topic_basis = detail::orthonormal_basis(cfg.dim, cfg.n_topics, rng);

    // term embeddings: topic anchor plus scatter
    Matrix anchors(cfg.n_topics, cfg.embedding_width);
    for (double& v : anchors.data) {
        v = rng.normal();
    }
    for (std::size_t k = 0; k < cfg.n_topics; ++k) {
        detail::normalize_row(anchors.row(k), cfg.embedding_width);
    }
    data.embeddings = Matrix(cfg.vocab_size, cfg.embedding_width);
    for (std::size_t t = 0; t < cfg.vocab_size; ++t) {
        const double* anchor = anchors.row(topic_of(t));
        double* row = data.embeddings.row(t);
        for (std::size_t j = 0; j < cfg.embedding_width; ++j) {
            row[j] = anchor[j] + cfg.term_spread * rng.normal();
        }
        detail::normalize_row(row, cfg.embedding_width);
    }

    // per-image topic mixtures and dense vectors
    data.image_dense.vectors = Matrix(cfg.n_images, cfg.dim);
    std::vector<std::vector<std::pair<std::size_t, double>>> mixtures(cfg.n_images);
    std::vector<std::size_t> topic_pool(cfg.n_topics);
    for (std::size_t i = 0; i < cfg.n_images; ++i) {
        std::snprintf(buf, sizeof buf, "i%06zu", i);
        data.image_dense.ids.push_back(buf);

        const std::size_t active = 1 + rng.below(cfg.max_topics_per_image);
        std::iota(topic_pool.begin(), topic_pool.end(), 0);
        for (std::size_t a = 0; a < active; ++a) {  // partial Fisher-Yates draw
            const std::size_t pick = a + rng.below(cfg.n_topics - a);
            std::swap(topic_pool[a], topic_pool[pick]);
        }
        double total = 0.0;
        auto& mix = mixtures[i];
        for (std::size_t a = 0; a < active; ++a) {
            const double w = rng.uniform(0.2, 1.0);
            mix.push_back({topic_pool[a], w});
            total += w;
        }
        for (auto& [topic, w] : mix) {
            w /= total;
        }
        double* z = data.image_dense.vectors.row(i);
        std::fill(z, z + cfg.dim, 0.0);
        for (const auto& [topic, w] : mix) {
            const double* b = topic_basis.row(topic);
            for (std::size_t j = 0; j < cfg.dim; ++j) {
                z[j] += w * b[j];
            }
        }
        detail::normalize_row(z, cfg.dim);
    }

    // captions: term draws follow the image's mixture; dense vector is a
    // noisy copy of the image vector (noise 0 -> identical)
    const std::size_t n_captions = cfg.n_images * cfg.captions_per_image;
    data.caption_dense.vectors = Matrix(n_captions, cfg.dim);
    std::size_t row = 0;
    for (std::size_t i = 0; i < cfg.n_images; ++i) {
        const auto& mix = mixtures[i];
        for (std::size_t c = 0; c < cfg.captions_per_image; ++c, ++row) {
            Caption cap;
            std::snprintf(buf, sizeof buf, "c%06zu_%zu", i, c);
            cap.id = buf;
            cap.image_id = data.image_dense.ids[i];
            for (std::size_t tok = 0; tok < cfg.caption_len; ++tok) {
                double u = rng.uniform();
                std::size_t topic = mix.back().first;
                for (const auto& [k, w] : mix) {
                    if (u < w) {
                        topic = k;
                        break;
                    }
                    u -= w;
                }
                const std::size_t term =
                    topic + cfg.n_topics * rng.below(topic_term_count(topic));
                cap.term_ids.push_back(static_cast<std::uint32_t>(term));
            }
            data.caption_dense.ids.push_back(cap.id);
            double* z = data.caption_dense.vectors.row(row);
            const double* zi = data.image_dense.vectors.row(i);
            const double scale = cfg.noise / std::sqrt(static_cast<double>(cfg.dim));
            for (std::size_t j = 0; j < cfg.dim; ++j) {
                z[j] = zi[j] + scale * rng.normal();
            }
            detail::normalize_row(z, cfg.dim);

            data.qrels.add(cap.id, cap.image_id);
            data.captions.push_back(std::move(cap));
        }
    }

    // split by image so no image leaks across splits; captions inherit
    std::vector<std::size_t> order(cfg.n_images);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const std::size_t n_train = static_cast<std::size_t>(
        std::floor(cfg.train_fraction * static_cast<double>(cfg.n_images)));
    const std::size_t n_valid = static_cast<std::size_t>(
        std::floor(cfg.valid_fraction * static_cast<double>(cfg.n_images)));
    std::vector<std::string> image_split(cfg.n_images);
    for (std::size_t pos = 0; pos < cfg.n_images; ++pos) {
        const char* tag = pos < n_train ? "train" : (pos < n_train + n_valid ? "valid" : "test");
        image_split[order[pos]] = tag;
    }
    for (std::size_t i = 0; i < cfg.n_images; ++i) {
        data.splits.images[data.image_dense.ids[i]] = image_split[i];
    }
    for (const auto& cap : data.captions) {
        const std::size_t image_ordinal = std::stoul(cap.image_id.substr(1));
        data.splits.captions[cap.id] = image_split[image_ordinal];
    }
    return data;
}

// Writes the full corpus into a directory with fixed file names.
struct SynthPaths {
    std::string vocab, captions, caption_dense, image_dense, embeddings, splits, qrels;

    static SynthPaths in_dir(const std::string& dir) {
        return {dir + "/vocab.txt",          dir + "/captions.jsonl",
                dir + "/captions_dense.d2sd", dir + "/images_dense.d2sd",
                dir + "/embeddings.d2se",     dir + "/splits.json",
                dir + "/qrels.txt"};
    }
};

inline void write_synth(const SynthData& data, const SynthPaths& paths) {
    write_vocabulary(data.vocab, paths.vocab);
    write_captions(data.captions, paths.captions);
    write_dense(data.caption_dense, paths.caption_dense);
    write_dense(data.image_dense, paths.image_dense);
    write_embeddings(data.embeddings, paths.embeddings);
    write_splits(data.splits, paths.splits);
    write_qrels(data.qrels, paths.qrels);
}

}  // namespace d2s
