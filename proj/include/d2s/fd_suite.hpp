#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "d2s/expansion.hpp"
#include "d2s/grad_check.hpp"
#include "d2s/layers.hpp"
#include "d2s/loss.hpp"
#include "d2s/projection.hpp"
#include "d2s/rng.hpp"

namespace d2s {

// Finite-difference verification of every hand-derived gradient, from single
// layers up to the full composed training objective. Each check returns the
// max relative error across the requested seeds.

struct FdCheckResult {
    std::string name;
    double max_error = 0.0;
};

struct FdSuiteConfig {
    std::size_t input_dim = 8;
    std::size_t hidden_dim = 5;
    std::size_t vocab_size = 17;
    std::size_t batch = 3;
    std::size_t seeds = 10;
    double fd_step = 1e-5;
};

namespace detail {

inline Matrix fd_random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo, double hi) {
    Matrix m(r, c);
    for (double& v : m.data) {
        v = rng.uniform(lo, hi);
    }
    return m;
}

inline std::vector<std::vector<std::uint32_t>> fd_random_caption_terms(std::size_t rows,
                                                                       std::size_t vocab,
                                                                       Rng& rng) {
    std::vector<std::vector<std::uint32_t>> terms(rows);
    for (auto& row : terms) {
        const std::size_t count = 2 + rng.below(3);
        for (std::size_t i = 0; i < count; ++i) {
            row.push_back(static_cast<std::uint32_t>(rng.below(vocab)));
        }
        std::sort(row.begin(), row.end());
        row.erase(std::unique(row.begin(), row.end()), row.end());
    }
    return terms;
}

}  // namespace detail

// d(layer_norm)/d(x, gamma, beta) against central differences.
inline double fd_layer_norm_error(const FdSuiteConfig& cfg, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "fd-layernorm"));
    const std::size_t b = cfg.batch, w = cfg.hidden_dim;
    Matrix x = detail::fd_random_matrix(b, w, rng, -2.0, 2.0);
    std::vector<double> gamma(w), beta(w);
    for (auto* v : {&gamma, &beta}) {
        for (double& e : *v) {
            e = rng.uniform(-1.0, 1.0);
        }
    }
    Matrix upstream = detail::fd_random_matrix(b, w, rng, -1.0, 1.0);
    const double eps = 1e-5;

    LayerNormCache cache;
    layer_norm_forward(x, gamma, beta, eps, &cache);
    LayerNormGrads grads = layer_norm_backward(cache, upstream);

    std::vector<double> theta;
    theta.insert(theta.end(), x.data.begin(), x.data.end());
    theta.insert(theta.end(), gamma.begin(), gamma.end());
    theta.insert(theta.end(), beta.begin(), beta.end());
    std::vector<double> analytic;
    analytic.insert(analytic.end(), grads.dx.data.begin(), grads.dx.data.end());
    analytic.insert(analytic.end(), grads.dgamma.begin(), grads.dgamma.end());
    analytic.insert(analytic.end(), grads.dbeta.begin(), grads.dbeta.end());

    ScalarFn f = [&](std::span<const double> t) {
        Matrix x2 = x;
        std::vector<double> g2(w), b2(w);
        std::copy(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(x.size()), x2.data.begin());
        std::copy(t.begin() + static_cast<std::ptrdiff_t>(x.size()),
                  t.begin() + static_cast<std::ptrdiff_t>(x.size() + w), g2.begin());
        std::copy(t.end() - static_cast<std::ptrdiff_t>(w), t.end(), b2.begin());
        Matrix y = layer_norm_forward(x2, g2, b2, eps);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            acc += upstream.data[i] * y.data[i];
        }
        return acc;
    };
    return grad_check(f, analytic, theta, cfg.fd_step);
}

// d(projection head)/d(params) against central differences.
inline double fd_projection_error(const FdSuiteConfig& cfg, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "fd-projection"));
    ProjectionParams p = init_params(cfg.input_dim, cfg.hidden_dim, cfg.vocab_size, seed);
    Matrix z = detail::fd_random_matrix(cfg.batch, cfg.input_dim, rng, -1.5, 1.5);
    Matrix upstream = detail::fd_random_matrix(cfg.batch, cfg.vocab_size, rng, -1.0, 1.0);

    ForwardCache cache;
    project_forward(p, z, &cache);
    ProjectionGrads g = project_backward(p, cache, upstream);

    ScalarFn f = [&](std::span<const double> theta) {
        ProjectionParams q = p;
        q.unflatten(theta);
        Matrix s = project_forward(q, z);
        double acc = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            acc += upstream.data[i] * s.data[i];
        }
        return acc;
    };
    std::vector<double> theta = p.flatten();
    std::vector<double> analytic = g.flatten();
    return grad_check(f, analytic, theta, cfg.fd_step);
}

// d(distillation loss)/d(sparse inputs) against central differences.
inline double fd_loss_error(const FdSuiteConfig& cfg, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "fd-loss"));
    const std::size_t b = std::max<std::size_t>(2, cfg.batch);
    Matrix dc = detail::fd_random_matrix(b, cfg.input_dim, rng, -1.0, 1.0);
    Matrix di = detail::fd_random_matrix(b, cfg.input_dim, rng, -1.0, 1.0);
    Matrix sc = detail::fd_random_matrix(b, cfg.vocab_size, rng, 0.05, 2.0);
    Matrix si = detail::fd_random_matrix(b, cfg.vocab_size, rng, 0.05, 2.0);
    DistillLossConfig loss_cfg;
    loss_cfg.temperature = 0.05;
    loss_cfg.sparsity_weight = 1e-3;

    DistillLossResult r = distill_loss(sc, si, dc, di, loss_cfg);
    std::vector<double> theta;
    theta.insert(theta.end(), sc.data.begin(), sc.data.end());
    theta.insert(theta.end(), si.data.begin(), si.data.end());
    std::vector<double> analytic;
    analytic.insert(analytic.end(), r.dcaption.data.begin(), r.dcaption.data.end());
    analytic.insert(analytic.end(), r.dimage.data.begin(), r.dimage.data.end());

    ScalarFn f = [&](std::span<const double> t) {
        Matrix c2 = sc, i2 = si;
        std::copy(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(sc.size()), c2.data.begin());
        std::copy(t.begin() + static_cast<std::ptrdiff_t>(sc.size()), t.end(), i2.data.begin());
        return distill_loss(c2, i2, dc, di, loss_cfg).loss;
    };
    return grad_check(f, analytic, theta, cfg.fd_step);
}

// The composed training objective: projection of both modalities, masked
// caption expansion with a fixed mid-schedule mask, distillation loss.
// Differentiates with respect to every head parameter.
inline double fd_composed_error(const FdSuiteConfig& cfg, std::uint64_t seed,
                                TermGating gating) {
    Rng rng(derive_seed(seed, "fd-composed"));
    ProjectionParams p = init_params(cfg.input_dim, cfg.hidden_dim, cfg.vocab_size, seed);
    const std::size_t b = std::max<std::size_t>(2, cfg.batch);
    Matrix zc = detail::fd_random_matrix(b, cfg.input_dim, rng, -1.0, 1.0);
    Matrix zi = detail::fd_random_matrix(b, cfg.input_dim, rng, -1.0, 1.0);
    auto caption_terms = detail::fd_random_caption_terms(b, cfg.vocab_size, rng);

    std::vector<double> df(cfg.vocab_size);
    for (double& v : df) {
        v = rng.uniform(0.0, 1.0);
    }
    ExpansionSchedule schedule = init_schedule(df, 4);
    step_schedule(schedule);
    step_schedule(schedule);
    ExpansionMask mask = sample_mask(schedule, rng);

    DistillLossConfig loss_cfg;
    loss_cfg.temperature = 0.05;
    loss_cfg.mix = 0.5;
    loss_cfg.sparsity_weight = 1e-3;

    auto objective = [&](const ProjectionParams& params, ForwardCache* cc, ForwardCache* ci,
                         DistillLossResult* out) {
        Matrix sc = project_forward(params, zc, cc);
        Matrix si = project_forward(params, zi, ci);
        Matrix sc_masked = expand(caption_terms, sc, mask, gating);
        DistillLossResult r = distill_loss(sc_masked, si, zc, zi, loss_cfg);
        if (out != nullptr) {
            *out = std::move(r);
            return out->loss;
        }
        return r.loss;
    };

    ForwardCache cache_c, cache_i;
    DistillLossResult loss;
    objective(p, &cache_c, &cache_i, &loss);
    Matrix dsc = expand_backward(caption_terms, loss.dcaption, mask, gating);
    ProjectionGrads grads = project_backward(p, cache_c, dsc, /*compute_dinput=*/false);
    ProjectionGrads grads_i = project_backward(p, cache_i, loss.dimage, /*compute_dinput=*/false);
    grads.add(grads_i);

    ScalarFn f = [&](std::span<const double> theta) {
        ProjectionParams q = p;
        q.unflatten(theta);
        return objective(q, nullptr, nullptr, nullptr);
    };
    std::vector<double> theta = p.flatten();
    std::vector<double> analytic = grads.flatten();
    return grad_check(f, analytic, theta, cfg.fd_step);
}

inline std::vector<FdCheckResult> run_fd_suite(const FdSuiteConfig& cfg) {
    std::vector<FdCheckResult> results{{"layer_norm_backward", 0.0},
                                       {"projection_backward", 0.0},
                                       {"distill_loss_gradient", 0.0},
                                       {"composed_objective_keep_always", 0.0},
                                       {"composed_objective_word_gated", 0.0}};
    for (std::uint64_t seed = 0; seed < cfg.seeds; ++seed) {
        results[0].max_error = std::max(results[0].max_error, fd_layer_norm_error(cfg, seed));
        results[1].max_error = std::max(results[1].max_error, fd_projection_error(cfg, seed));
        results[2].max_error = std::max(results[2].max_error, fd_loss_error(cfg, seed));
        results[3].max_error = std::max(results[3].max_error,
                                        fd_composed_error(cfg, seed, TermGating::keep_always));
        results[4].max_error = std::max(results[4].max_error,
                                        fd_composed_error(cfg, seed, TermGating::word_gated));
    }
    return results;
}

}  // namespace d2s
