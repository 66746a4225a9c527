#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "d2s/grad_check.hpp"
#include "d2s/layers.hpp"
#include "d2s/loss.hpp"
#include "d2s/rng.hpp"

using namespace d2s;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo, double hi) {
    Matrix m(r, c);
    for (double& v : m.data) {
        v = rng.uniform(lo, hi);
    }
    return m;
}

// Independent loss oracle: scalar loops, no shared code with the production
// path beyond the softmax helper.
double loss_oracle(const Matrix& sc, const Matrix& si, const Matrix& dc, const Matrix& di,
                   const DistillLossConfig& cfg) {
    const std::size_t b = sc.rows;
    auto directional = [&](bool caption_to_image) {
        double total = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            std::vector<double> dense_logits(b), sparse_logits(b);
            for (std::size_t j = 0; j < b; ++j) {
                double dd = 0.0, ss = 0.0;
                for (std::size_t k = 0; k < dc.cols; ++k) {
                    dd += caption_to_image ? dc.at(i, k) * di.at(j, k)
                                           : di.at(i, k) * dc.at(j, k);
                }
                for (std::size_t k = 0; k < sc.cols; ++k) {
                    ss += caption_to_image ? sc.at(i, k) * si.at(j, k)
                                           : si.at(i, k) * sc.at(j, k);
                }
                dense_logits[j] = dd / cfg.temperature;
                sparse_logits[j] = ss;
            }
            std::vector<double> t = cfg.hard_labels
                                        ? [&] {
                                              std::vector<double> h(b, 0.0);
                                              h[i] = 1.0;
                                              return h;
                                          }()
                                        : stable_softmax(dense_logits);
            std::vector<double> logp = log_softmax(sparse_logits);
            for (std::size_t j = 0; j < b; ++j) {
                total -= t[j] * logp[j] / std::log(2.0);
            }
        }
        return total / static_cast<double>(b);
    };
    double sim = directional(true) + directional(false);
    double l1c = 0.0, l1i = 0.0;
    for (double v : sc.data) l1c += std::abs(v);
    for (double v : si.data) l1i += std::abs(v);
    l1c /= static_cast<double>(b);
    l1i /= static_cast<double>(b);
    return (1.0 - cfg.mix) * sim + cfg.mix * cfg.sparsity_weight * (l1i + l1c);
}

}  // namespace

TEST(DistillLoss, MatchesScalarOracle) {
    Rng rng(10);
    const std::size_t b = 5, dim = 7, vocab = 13;
    for (int rep = 0; rep < 8; ++rep) {
        Matrix dc = random_matrix(b, dim, rng, -1.0, 1.0);
        Matrix di = random_matrix(b, dim, rng, -1.0, 1.0);
        Matrix sc = random_matrix(b, vocab, rng, 0.0, 2.0);
        Matrix si = random_matrix(b, vocab, rng, 0.0, 2.0);
        DistillLossConfig cfg;
        cfg.temperature = 0.05;  // keep targets soft enough to exercise every term
        cfg.sparsity_weight = 1e-3;
        DistillLossResult r = distill_loss(sc, si, dc, di, cfg);
        EXPECT_NEAR(r.loss, loss_oracle(sc, si, dc, di, cfg), 1e-10);
    }
}

TEST(DistillLoss, MixZeroDropsRegularizer) {
    Rng rng(11);
    const std::size_t b = 4, dim = 6, vocab = 9;
    Matrix dc = random_matrix(b, dim, rng, -1.0, 1.0);
    Matrix di = random_matrix(b, dim, rng, -1.0, 1.0);
    Matrix sc = random_matrix(b, vocab, rng, 0.0, 2.0);
    Matrix si = random_matrix(b, vocab, rng, 0.0, 2.0);
    DistillLossConfig cfg;
    cfg.temperature = 0.05;
    DistillLossConfig sim_only = cfg;
    sim_only.mix = 0.0;
    DistillLossConfig reg_only = cfg;
    reg_only.mix = 1.0;
    DistillLossResult full = distill_loss(sc, si, dc, di, cfg);
    DistillLossResult sim = distill_loss(sc, si, dc, di, sim_only);
    DistillLossResult reg = distill_loss(sc, si, dc, di, reg_only);
    // the mix is affine: loss(mix) == (1-mix)*sim_part + mix*reg_part
    EXPECT_NEAR(full.loss, (1.0 - cfg.mix) * sim.loss + cfg.mix * reg.loss, 1e-10);
    // pure-regularizer case equals eta * (mean L1 of each side)
    double l1c = 0.0, l1i = 0.0;
    for (double v : sc.data) l1c += v;
    for (double v : si.data) l1i += v;
    EXPECT_NEAR(reg.loss, cfg.sparsity_weight * (l1c + l1i) / b, 1e-10);
}

TEST(DistillLoss, PerfectPredictionsWithHardLabelsApproachZero) {
    // sparse scores proportional to a sharply diagonal structure drive the
    // cross-entropy toward zero when labels are hard
    const std::size_t b = 4, vocab = 8;
    Matrix sc(b, vocab, 0.0), si(b, vocab, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        sc.at(i, i) = 40.0;
        si.at(i, i) = 1.0;
    }
    Matrix dense(b, 3, 0.0);
    DistillLossConfig cfg;
    cfg.hard_labels = true;
    cfg.mix = 0.0;
    DistillLossResult r = distill_loss(sc, si, dense, dense, cfg);
    EXPECT_LT(r.loss, 1e-6);
}

TEST(DistillLoss, UniformScoresGiveLogBBits) {
    // all-equal sparse scores make every row of P uniform: each direction
    // contributes exactly log2(b) bits regardless of the targets
    const std::size_t b = 8, vocab = 5, dim = 3;
    Rng rng(12);
    Matrix sc(b, vocab, 1.0), si(b, vocab, 1.0);
    Matrix dc = random_matrix(b, dim, rng, -1.0, 1.0);
    Matrix di = random_matrix(b, dim, rng, -1.0, 1.0);
    DistillLossConfig cfg;
    cfg.temperature = 0.05;
    cfg.mix = 0.0;
    DistillLossResult r = distill_loss(sc, si, dc, di, cfg);
    EXPECT_NEAR(r.loss, 2.0 * std::log2(static_cast<double>(b)), 1e-9);
}

TEST(DistillLoss, GradientMatchesFiniteDifferences) {
    const std::size_t b = 4, dim = 5, vocab = 7;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(500 + seed);
        Matrix dc = random_matrix(b, dim, rng, -1.0, 1.0);
        Matrix di = random_matrix(b, dim, rng, -1.0, 1.0);
        Matrix sc = random_matrix(b, vocab, rng, 0.05, 2.0);
        Matrix si = random_matrix(b, vocab, rng, 0.05, 2.0);
        DistillLossConfig cfg;
        cfg.temperature = 0.05;
        cfg.sparsity_weight = 1e-3;

        DistillLossResult r = distill_loss(sc, si, dc, di, cfg);

        // pack (captions, images) into one parameter vector
        std::vector<double> theta;
        theta.insert(theta.end(), sc.data.begin(), sc.data.end());
        theta.insert(theta.end(), si.data.begin(), si.data.end());
        std::vector<double> analytic;
        analytic.insert(analytic.end(), r.dcaption.data.begin(), r.dcaption.data.end());
        analytic.insert(analytic.end(), r.dimage.data.begin(), r.dimage.data.end());

        ScalarFn f = [&](std::span<const double> t) {
            Matrix c2 = sc, i2 = si;
            std::copy(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(sc.size()),
                      c2.data.begin());
            std::copy(t.begin() + static_cast<std::ptrdiff_t>(sc.size()), t.end(),
                      i2.data.begin());
            return distill_loss(c2, i2, dc, di, cfg).loss;
        };
        const double err = grad_check(f, analytic, theta, 1e-6);
        EXPECT_LE(err, 1e-6) << "seed " << seed;
    }
}

TEST(DistillLoss, HardLabelGradientMatchesFiniteDifferences) {
    const std::size_t b = 4, dim = 5, vocab = 7;
    Rng rng(600);
    Matrix dc = random_matrix(b, dim, rng, -1.0, 1.0);
    Matrix di = random_matrix(b, dim, rng, -1.0, 1.0);
    Matrix sc = random_matrix(b, vocab, rng, 0.05, 2.0);
    Matrix si = random_matrix(b, vocab, rng, 0.05, 2.0);
    DistillLossConfig cfg;
    cfg.hard_labels = true;
    cfg.sparsity_weight = 1e-3;

    DistillLossResult r = distill_loss(sc, si, dc, di, cfg);
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
        return distill_loss(c2, i2, dc, di, cfg).loss;
    };
    EXPECT_LE(grad_check(f, analytic, theta, 1e-6), 1e-6);
}

TEST(DistillLoss, RejectsDegenerateInputs) {
    Rng rng(13);
    Matrix dc = random_matrix(1, 4, rng, -1.0, 1.0);
    Matrix sc = random_matrix(1, 6, rng, 0.0, 1.0);
    DistillLossConfig cfg;
    // batch of one: softmax over a single candidate is vacuous
    EXPECT_THROW(distill_loss(sc, sc, dc, dc, cfg), ConfigError);

    Matrix dc2 = random_matrix(3, 4, rng, -1.0, 1.0);
    Matrix di2 = random_matrix(2, 4, rng, -1.0, 1.0);
    Matrix sc2 = random_matrix(3, 6, rng, 0.0, 1.0);
    Matrix si2 = random_matrix(2, 6, rng, 0.0, 1.0);
    EXPECT_THROW(distill_loss(sc2, si2, dc2, di2, cfg), ShapeError);

    DistillLossConfig bad_temp;
    bad_temp.temperature = 0.0;
    Matrix d3 = random_matrix(2, 4, rng, -1.0, 1.0);
    Matrix s3 = random_matrix(2, 6, rng, 0.0, 1.0);
    EXPECT_THROW(distill_loss(s3, s3, d3, d3, bad_temp), ConfigError);
}

TEST(DistillLoss, SparsityGradientIsUniform) {
    // with mix = 1 only the regularizer remains: gradient is eta*mix/b = eta/b
    const std::size_t b = 4, dim = 3, vocab = 6;
    Rng rng(14);
    Matrix dc = random_matrix(b, dim, rng, -1.0, 1.0);
    Matrix di = random_matrix(b, dim, rng, -1.0, 1.0);
    Matrix sc = random_matrix(b, vocab, rng, 0.1, 2.0);
    Matrix si = random_matrix(b, vocab, rng, 0.1, 2.0);
    DistillLossConfig cfg;
    cfg.mix = 1.0;
    cfg.sparsity_weight = 2e-3;
    DistillLossResult r = distill_loss(sc, si, dc, di, cfg);
    const double expected = cfg.mix * cfg.sparsity_weight / static_cast<double>(b);
    for (double v : r.dcaption.data) {
        EXPECT_NEAR(v, expected, 1e-15);
    }
    for (double v : r.dimage.data) {
        EXPECT_NEAR(v, expected, 1e-15);
    }
}

TEST(DistillLoss, NonFiniteDenseScoreIsNamedInError) {
    Rng rng(15);
    Matrix dc = random_matrix(3, 4, rng, -1.0, 1.0);
    Matrix di = random_matrix(3, 4, rng, -1.0, 1.0);
    Matrix sc = random_matrix(3, 6, rng, 0.0, 1.0);
    Matrix si = random_matrix(3, 6, rng, 0.0, 1.0);
    dc.at(1, 2) = std::numeric_limits<double>::infinity();
    DistillLossConfig cfg;
    EXPECT_THROW(distill_loss(sc, si, dc, di, cfg), NumericError);
}
