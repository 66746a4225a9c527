#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "d2s/errors.hpp"
#include "d2s/matrix.hpp"

namespace d2s {

struct LayerNormCache {
    Matrix normalized;            // (x - mean) * inv_std, per row
    std::vector<double> inv_std;  // per row
    std::vector<double> mean;     // per row
    std::vector<double> gamma;    // copied for backward
};

// Per-row layer normalization with learnable affine (gamma, beta).
// Variance is the biased (population) variance over the row.
inline Matrix layer_norm_forward(const Matrix& x, std::span<const double> gamma,
                                 std::span<const double> beta, double eps,
                                 LayerNormCache* cache = nullptr) {
    if (eps <= 0.0) {
        throw ConfigError("layer_norm: eps must be > 0");
    }
    if (gamma.size() != x.cols || beta.size() != x.cols) {
        throw ShapeError("layer_norm: affine parameter length does not match row width");
    }
    Matrix y(x.rows, x.cols);
    Matrix normalized(x.rows, x.cols);
    std::vector<double> inv_std(x.rows), mean(x.rows);
    const double n = static_cast<double>(x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double m = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            m += xi[j];
        }
        m /= n;
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double d = xi[j] - m;
            var += d * d;
        }
        var /= n;
        const double istd = 1.0 / std::sqrt(var + eps);
        double* ni = normalized.row(i);
        double* yi = y.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) {
            ni[j] = (xi[j] - m) * istd;
            yi[j] = ni[j] * gamma[j] + beta[j];
        }
        inv_std[i] = istd;
        mean[i] = m;
    }
    if (cache != nullptr) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
        cache->mean = std::move(mean);
        cache->gamma.assign(gamma.begin(), gamma.end());
    }
    return y;
}

struct LayerNormGrads {
    Matrix dx;
    std::vector<double> dgamma;
    std::vector<double> dbeta;
};

inline LayerNormGrads layer_norm_backward(const LayerNormCache& cache, const Matrix& dy) {
    if (dy.rows != cache.normalized.rows || dy.cols != cache.normalized.cols) {
        throw ShapeError("layer_norm_backward: dy shape does not match cache");
    }
    const std::size_t cols = dy.cols;
    LayerNormGrads g;
    g.dx = Matrix(dy.rows, cols);
    g.dgamma.assign(cols, 0.0);
    g.dbeta.assign(cols, 0.0);
    const double n = static_cast<double>(cols);
    for (std::size_t i = 0; i < dy.rows; ++i) {
        const double* dyi = dy.row(i);
        const double* ni = cache.normalized.row(i);
        // dxhat = dy * gamma; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double dxhat = dyi[j] * cache.gamma[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * ni[j];
            g.dgamma[j] += dyi[j] * ni[j];
            g.dbeta[j] += dyi[j];
        }
        const double m1 = sum_dxhat / n;
        const double m2 = sum_dxhat_xhat / n;
        double* dxi = g.dx.row(i);
        for (std::size_t j = 0; j < cols; ++j) {
            const double dxhat = dyi[j] * cache.gamma[j];
            dxi[j] = cache.inv_std[i] * (dxhat - m1 - ni[j] * m2);
        }
    }
    return g;
}

// Entrywise log(1 + max(0, s)). Output is nonnegative everywhere.
inline Matrix log1p_relu(const Matrix& s) {
    Matrix out(s.rows, s.cols);
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        const double v = s.data[i];
        out.data[i] = v > 0.0 ? std::log1p(v) : 0.0;
    }
    return out;
}

// Backward of log1p_relu: d/ds = 1/(1+s) where s > 0, else 0 (the chosen
// subgradient at s = 0 is 0, keeping inactive dimensions inactive).
inline Matrix log1p_relu_backward(const Matrix& pre_activation, const Matrix& dout) {
    if (!pre_activation.same_shape(dout)) {
        throw ShapeError("log1p_relu_backward: shape mismatch");
    }
    Matrix ds(dout.rows, dout.cols);
    for (std::size_t i = 0; i < ds.data.size(); ++i) {
        const double v = pre_activation.data[i];
        ds.data[i] = v > 0.0 ? dout.data[i] / (1.0 + v) : 0.0;
    }
    return ds;
}

// Max-subtracted softmax over a contiguous range; writes into out.
inline void stable_softmax(std::span<const double> logits, std::span<double> out) {
    if (logits.empty()) {
        throw ShapeError("stable_softmax: empty input");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) {
        if (v > mx) {
            mx = v;
        }
    }
    if (!std::isfinite(mx)) {
        throw NumericError("stable_softmax: no finite entry dominates (degenerate distribution)");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        out[j] = std::exp(logits[j] - mx);
        z += out[j];
    }
    for (std::size_t j = 0; j < logits.size(); ++j) {
        out[j] /= z;
    }
}

inline std::vector<double> stable_softmax(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    stable_softmax(logits, out);
    return out;
}

// Natural-log softmax via log-sum-exp; avoids log(0) for finite inputs.
inline void log_softmax(std::span<const double> logits, std::span<double> out) {
    if (logits.empty()) {
        throw ShapeError("log_softmax: empty input");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) {
        if (v > mx) {
            mx = v;
        }
    }
    if (!std::isfinite(mx)) {
        throw NumericError("log_softmax: no finite entry dominates (degenerate distribution)");
    }
    double z = 0.0;
    for (double v : logits) {
        z += std::exp(v - mx);
    }
    const double lz = std::log(z);
    for (std::size_t j = 0; j < logits.size(); ++j) {
        out[j] = logits[j] - mx - lz;
    }
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    log_softmax(logits, out);
    return out;
}

}  // namespace d2s
