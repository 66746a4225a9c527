#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "d2s/adam.hpp"
#include "d2s/grad_check.hpp"
#include "d2s/layers.hpp"
#include "d2s/matrix.hpp"
#include "d2s/rng.hpp"

using namespace d2s;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data) {
        v = rng.uniform(lo, hi);
    }
    return m;
}

// Independent oracle: plain triple loop, ijk order, scalar accumulator.
Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += a.at(i, k) * b.at(k, j);
            }
            c.at(i, j) = acc;
        }
    }
    return c;
}

}  // namespace

TEST(Matmul, IdentityPassesThrough) {
    Rng rng(1);
    Matrix b = random_matrix(3, 5, rng);
    Matrix eye(3, 3);
    for (std::size_t i = 0; i < 3; ++i) {
        eye.at(i, i) = 1.0;
    }
    Matrix c = matmul(eye, b);
    EXPECT_EQ(c.data, b.data);
}

TEST(Matmul, ZeroMatrixAnnihilates) {
    Rng rng(2);
    Matrix a = random_matrix(4, 3, rng);
    Matrix zero(3, 2, 0.0);
    Matrix c = matmul(a, zero);
    for (double v : c.data) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Matmul, MatchesTripleLoopOracleBitExact) {
    Rng rng(3);
    Matrix a = random_matrix(4, 3, rng);
    Matrix b = random_matrix(3, 2, rng);
    Matrix expected = matmul_oracle(a, b);
    Matrix got = matmul(a, b);
    ASSERT_EQ(got.rows, expected.rows);
    ASSERT_EQ(got.cols, expected.cols);
    for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got.data[i], expected.data[i]) << "entry " << i;
    }
}

TEST(Matmul, ShapeMismatchThrows) {
    Matrix a(2, 3), b(4, 2);
    EXPECT_THROW(matmul(a, b), ShapeError);
}

TEST(Matmul, AssociativityWithinTolerance) {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        Matrix a = random_matrix(4, 5, rng);
        Matrix b = random_matrix(5, 3, rng);
        Matrix c = random_matrix(3, 6, rng);
        Matrix left = matmul(matmul(a, b), c);
        Matrix right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            EXPECT_NEAR(left.data[i], right.data[i], 1e-9);
        }
    }
}

TEST(Matmul, TransposedVariantsAgreeWithPlainForm) {
    Rng rng(5);
    Matrix a = random_matrix(4, 3, rng);
    Matrix b = random_matrix(5, 3, rng);
    Matrix nt = matmul_nt(a, b);               // a * b^T
    Matrix nt_ref = matmul(a, transpose(b));
    EXPECT_EQ(nt.data, nt_ref.data);

    Matrix c = random_matrix(4, 6, rng);
    Matrix tn = matmul_tn(a, c);               // a^T * c
    Matrix tn_ref = matmul(transpose(a), c);
    ASSERT_EQ(tn.rows, tn_ref.rows);
    for (std::size_t i = 0; i < tn.size(); ++i) {
        EXPECT_EQ(tn.data[i], tn_ref.data[i]);
    }
}

TEST(LayerNorm, ConstantRowCollapsesToBeta) {
    Matrix x(1, 4, 3.7);
    std::vector<double> gamma{2.0, 2.0, 2.0, 2.0}, beta{0.5, -1.0, 0.0, 2.5};
    Matrix y = layer_norm_forward(x, gamma, beta, 1e-5);
    for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_EQ(y.at(0, j), beta[j]);
    }
}

TEST(LayerNorm, UnitVarianceRowIsNearlyFixed) {
    // mean 0, population variance 1 - eps, so normalization is ~identity
    const double eps = 1e-5;
    const double s = std::sqrt(1.0 - eps);
    Matrix x(1, 2);
    x.at(0, 0) = s;
    x.at(0, 1) = -s;
    std::vector<double> gamma{1.0, 1.0}, beta{0.0, 0.0};
    Matrix y = layer_norm_forward(x, gamma, beta, eps);
    EXPECT_NEAR(y.at(0, 0), x.at(0, 0), 1e-12);
    EXPECT_NEAR(y.at(0, 1), x.at(0, 1), 1e-12);
}

TEST(LayerNorm, MatchesDirectRecomputation) {
    Rng rng(6);
    Matrix x = random_matrix(3, 7, rng, -2.0, 2.0);
    std::vector<double> gamma(7), beta(7);
    for (std::size_t j = 0; j < 7; ++j) {
        gamma[j] = rng.uniform(0.5, 1.5);
        beta[j] = rng.uniform(-0.5, 0.5);
    }
    const double eps = 1e-5;
    Matrix y = layer_norm_forward(x, gamma, beta, eps);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            mean += x.at(i, j);
        }
        mean /= static_cast<double>(x.cols);
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
        }
        var /= static_cast<double>(x.cols);
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double expected = (x.at(i, j) - mean) / std::sqrt(var + eps) * gamma[j] + beta[j];
            EXPECT_NEAR(y.at(i, j), expected, 1e-12);
        }
    }
}

TEST(LayerNorm, NormalizedRowsHaveZeroMeanUnitVariance) {
    Rng rng(7);
    Matrix x = random_matrix(4, 16, rng, -5.0, 5.0);
    std::vector<double> gamma(16, 1.0), beta(16, 0.0);
    const double eps = 1e-5;
    Matrix y = layer_norm_forward(x, gamma, beta, eps);
    for (std::size_t i = 0; i < y.rows; ++i) {
        double raw_mean = 0.0, raw_var = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            raw_mean += x.at(i, j);
        }
        raw_mean /= 16.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            raw_var += (x.at(i, j) - raw_mean) * (x.at(i, j) - raw_mean);
        }
        raw_var /= 16.0;

        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < y.cols; ++j) {
            mean += y.at(i, j);
        }
        mean /= 16.0;
        for (std::size_t j = 0; j < y.cols; ++j) {
            var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        }
        var /= 16.0;
        EXPECT_LE(std::abs(mean), 1e-10);
        // with the bias term inside the square root the normalized variance is
        // exactly var/(var+eps), just shy of one
        EXPECT_NEAR(var, raw_var / (raw_var + eps), 1e-12);
        EXPECT_LE(var, 1.0);
    }
}

TEST(LayerNorm, RejectsNonPositiveEps) {
    Matrix x(1, 4, 1.0);
    std::vector<double> gamma(4, 1.0), beta(4, 0.0);
    EXPECT_THROW(layer_norm_forward(x, gamma, beta, 0.0), ConfigError);
    EXPECT_THROW(layer_norm_forward(x, gamma, beta, -1e-5), ConfigError);
}

TEST(LayerNormBackward, ZeroUpstreamGivesZeroGrads) {
    Rng rng(8);
    Matrix x = random_matrix(2, 5, rng);
    std::vector<double> gamma(5, 1.3), beta(5, 0.2);
    LayerNormCache cache;
    layer_norm_forward(x, gamma, beta, 1e-5, &cache);
    Matrix dy(2, 5, 0.0);
    LayerNormGrads g = layer_norm_backward(cache, dy);
    for (double v : g.dx.data) {
        EXPECT_EQ(v, 0.0);
    }
    for (double v : g.dgamma) {
        EXPECT_EQ(v, 0.0);
    }
    for (double v : g.dbeta) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(LayerNormBackward, ShapeMismatchThrows) {
    Matrix x(2, 5, 1.0);
    x.at(0, 0) = 2.0;
    std::vector<double> gamma(5, 1.0), beta(5, 0.0);
    LayerNormCache cache;
    layer_norm_forward(x, gamma, beta, 1e-5, &cache);
    Matrix dy(2, 4, 1.0);
    EXPECT_THROW(layer_norm_backward(cache, dy), ShapeError);
}

// Finite-difference oracle over all inputs of the layer (x, gamma, beta).
TEST(LayerNormBackward, MatchesFiniteDifferences) {
    const std::size_t batch = 3, width = 7;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(100 + seed);
        Matrix x = random_matrix(batch, width, rng, -2.0, 2.0);
        std::vector<double> gamma(width), beta(width);
        for (std::size_t j = 0; j < width; ++j) {
            gamma[j] = rng.uniform(0.5, 1.5);
            beta[j] = rng.uniform(-0.5, 0.5);
        }
        Matrix dy = random_matrix(batch, width, rng);
        const double eps = 1e-5;

        LayerNormCache cache;
        layer_norm_forward(x, gamma, beta, eps, &cache);
        LayerNormGrads g = layer_norm_backward(cache, dy);

        // scalar objective: sum(dy .* layer_norm(x, gamma, beta))
        auto pack = [&](const Matrix& xx, const std::vector<double>& gg,
                        const std::vector<double>& bb) {
            std::vector<double> theta(xx.data.begin(), xx.data.end());
            theta.insert(theta.end(), gg.begin(), gg.end());
            theta.insert(theta.end(), bb.begin(), bb.end());
            return theta;
        };
        ScalarFn f = [&](std::span<const double> theta) {
            Matrix xx(batch, width);
            std::copy(theta.begin(), theta.begin() + batch * width, xx.data.begin());
            std::vector<double> gg(theta.begin() + batch * width,
                                   theta.begin() + batch * width + width);
            std::vector<double> bb(theta.begin() + batch * width + width, theta.end());
            Matrix y = layer_norm_forward(xx, gg, bb, eps);
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                acc += dy.data[i] * y.data[i];
            }
            return acc;
        };
        std::vector<double> analytic = pack(g.dx, g.dgamma, g.dbeta);
        std::vector<double> theta = pack(x, gamma, beta);
        const double err = grad_check(f, analytic, theta, 1e-5);
        EXPECT_LE(err, 1e-6) << "seed " << seed;
    }
}

TEST(Log1pRelu, KnownValues) {
    Matrix s(1, 3);
    s.at(0, 0) = -3.0;
    s.at(0, 1) = 0.0;
    s.at(0, 2) = std::exp(1.0) - 1.0;
    Matrix y = log1p_relu(s);
    EXPECT_EQ(y.at(0, 0), 0.0);
    EXPECT_EQ(y.at(0, 1), 0.0);
    EXPECT_NEAR(y.at(0, 2), 1.0, 1e-12);
}

TEST(Log1pRelu, MonotoneAndZeroOnNonpositives) {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        const double a = rng.uniform(-5.0, 5.0);
        const double b = rng.uniform(-5.0, 5.0);
        Matrix s(1, 2);
        s.at(0, 0) = std::min(a, b);
        s.at(0, 1) = std::max(a, b);
        Matrix y = log1p_relu(s);
        EXPECT_LE(y.at(0, 0), y.at(0, 1));
        EXPECT_GE(y.at(0, 0), 0.0);
        if (s.at(0, 0) <= 0.0) {
            EXPECT_EQ(y.at(0, 0), 0.0);
        }
    }
}

TEST(Log1pRelu, BackwardUsesZeroSubgradientAtKink) {
    Matrix pre(1, 3);
    pre.at(0, 0) = -1.0;
    pre.at(0, 1) = 0.0;
    pre.at(0, 2) = 1.0;
    Matrix dout(1, 3, 1.0);
    Matrix ds = log1p_relu_backward(pre, dout);
    EXPECT_EQ(ds.at(0, 0), 0.0);
    EXPECT_EQ(ds.at(0, 1), 0.0);
    EXPECT_NEAR(ds.at(0, 2), 0.5, 1e-15);
}

TEST(Softmax, SymmetricPairs) {
    std::vector<double> out = stable_softmax(std::vector<double>{0.0, 0.0});
    EXPECT_NEAR(out[0], 0.5, 1e-15);
    EXPECT_NEAR(out[1], 0.5, 1e-15);

    out = stable_softmax(std::vector<double>{1000.0, 1000.0});
    EXPECT_NEAR(out[0], 0.5, 1e-15);
    EXPECT_NEAR(out[1], 0.5, 1e-15);
}

TEST(Softmax, MatchesDirectFormula) {
    std::vector<double> logits{1.0, 2.0, 3.0};
    std::vector<double> out = stable_softmax(logits);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    EXPECT_NEAR(out[0], std::exp(1.0) / z, 1e-12);
    EXPECT_NEAR(out[1], std::exp(2.0) / z, 1e-12);
    EXPECT_NEAR(out[2], std::exp(3.0) / z, 1e-12);
    double sum = 0.0;
    for (double v : out) {
        sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Softmax, AllNegativeInfinityIsDegenerate) {
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<double> logits{ninf, ninf};
    EXPECT_THROW(stable_softmax(logits), NumericError);
}

TEST(Adam, ZeroGradientLeavesParamsUntouched) {
    std::vector<double> params{1.0, -2.0, 3.0};
    std::vector<double> grads(3, 0.0);
    AdamState state(3);
    adam_step(params, grads, state, AdamConfig{});
    EXPECT_EQ(params[0], 1.0);
    EXPECT_EQ(params[1], -2.0);
    EXPECT_EQ(params[2], 3.0);
    EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    // bias correction makes the first update lr * g / (|g| + eps')
    std::vector<double> params{0.0};
    std::vector<double> grads{1.0};
    AdamState state(1);
    AdamConfig cfg;
    cfg.lr = 0.1;
    adam_step(params, grads, state, cfg);
    EXPECT_NEAR(params[0], -0.1, 1e-8);
}

TEST(Adam, DeterministicAcrossIdenticalRuns) {
    auto run = [] {
        std::vector<double> params{0.3, -0.7};
        AdamState state(2);
        AdamConfig cfg;
        Rng rng(11);
        for (int i = 0; i < 50; ++i) {
            std::vector<double> grads{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            adam_step(params, grads, state, cfg);
        }
        return params;
    };
    auto a = run();
    auto b = run();
    EXPECT_EQ(a, b);
}

TEST(Adam, NonFiniteGradientAborts) {
    std::vector<double> params{0.0};
    std::vector<double> grads{std::numeric_limits<double>::quiet_NaN()};
    AdamState state(1);
    EXPECT_THROW(adam_step(params, grads, state, AdamConfig{}), NumericError);
}

TEST(GradCheck, QuadraticFunction) {
    ScalarFn f = [](std::span<const double> theta) {
        double acc = 0.0;
        for (double v : theta) {
            acc += v * v;
        }
        return acc;
    };
    std::vector<double> theta{1.0, 2.0};
    std::vector<double> analytic{2.0, 4.0};
    EXPECT_LE(grad_check(f, analytic, theta, 1e-5), 1e-9);
}

TEST(GradCheck, ConstantFunction) {
    ScalarFn f = [](std::span<const double>) { return 42.0; };
    std::vector<double> theta{0.5, -0.5, 3.0};
    std::vector<double> analytic(3, 0.0);
    EXPECT_LE(grad_check(f, analytic, theta, 1e-5), 1e-9);
}

TEST(GradCheck, DetectsWrongGradient) {
    ScalarFn f = [](std::span<const double> theta) { return theta[0] * theta[0]; };
    std::vector<double> theta{1.0};
    std::vector<double> wrong{7.0};
    EXPECT_GT(grad_check(f, wrong, theta, 1e-5), 0.1);
}

TEST(Rng, BernoulliEdgesAreSure) {
    Rng rng(12);
    for (int i = 0; i < 1000; ++i) {
        EXPECT_FALSE(rng.bernoulli(0.0));
        EXPECT_TRUE(rng.bernoulli(1.0));
    }
}

TEST(Rng, BernoulliHalfConcentrates) {
    Rng rng(13);
    int ones = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        ones += rng.bernoulli(0.5) ? 1 : 0;
    }
    const double mean = static_cast<double>(ones) / n;
    EXPECT_GE(mean, 0.47);
    EXPECT_LE(mean, 0.53);
}

TEST(Rng, SameSeedSameStream) {
    Rng a(99), b(99);
    for (int i = 0; i < 100; ++i) {
        EXPECT_EQ(a.next_u64(), b.next_u64());
    }
}
