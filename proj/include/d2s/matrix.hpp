#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "d2s/errors.hpp"

namespace d2s {

// Worker cap: D2S_THREADS env var if set, else hardware concurrency.
inline std::size_t max_workers() {
    if (const char* env = std::getenv("D2S_THREADS")) {
        const long v = std::atol(env);
        if (v >= 1) {
            return static_cast<std::size_t>(v);
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// Runs fn(begin, end) over a partition of [0, n). Each index is handled by
// exactly one worker, so any per-index computation is independent of the
// worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(max_workers(), std::max<std::size_t>(n, 1));
    if (workers <= 1 || n < 2) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) {
            break;
        }
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& t : pool) {
        t.join();
    }
}

// Row-major dense matrix of doubles. Training-time arithmetic is all f64;
// f32 enters only at the storage boundary.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }
    std::size_t size() const { return data.size(); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

inline bool all_finite(const Matrix& m) {
    for (double v : m.data) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

inline void require_finite(const Matrix& m, const std::string& what) {
    if (!all_finite(m)) {
        throw NumericError("non-finite value in " + what);
    }
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* src = a.row(i);
        for (std::size_t j = 0; j < a.cols; ++j) {
            t.data[j * a.rows + i] = src[j];
        }
    }
    return t;
}

// C = A * B. Every C[i,j] is accumulated over k in ascending order within a
// single worker, so results are bit-identical for any worker count and equal
// to a naive triple loop. Row/column tiling below only reorders independent
// elements, never the per-element sum.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(a.cols) +
                         " vs " + std::to_string(b.rows) + ")");
    }
    Matrix c(a.rows, b.cols, 0.0);
    constexpr std::size_t row_tile = 8;   // C tile stays L1-resident
    constexpr std::size_t col_tile = 256;
    parallel_for(a.rows, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i0 = lo; i0 < hi; i0 += row_tile) {
            const std::size_t i1 = std::min(hi, i0 + row_tile);
            for (std::size_t j0 = 0; j0 < b.cols; j0 += col_tile) {
                const std::size_t width = std::min(b.cols, j0 + col_tile) - j0;
                for (std::size_t k = 0; k < a.cols; ++k) {
                    const double* brow = b.row(k) + j0;
                    for (std::size_t i = i0; i < i1; ++i) {
                        const double aik = a.at(i, k);
                        double* crow = c.row(i) + j0;
                        for (std::size_t j = 0; j < width; ++j) {
                            crow[j] += aik * brow[j];
                        }
                    }
                }
            }
        }
    });
    return c;
}

// C = A * B^T, via an explicit transpose so the summation order matches
// matmul exactly.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) {
        throw ShapeError("matmul_nt: inner dimensions disagree (" + std::to_string(a.cols) +
                         " vs " + std::to_string(b.cols) + ")");
    }
    return matmul(a, transpose(b));
}

// C = A^T * B, with A and B sharing their row count. C[i,j] accumulates over
// rows of A/B in ascending order; the k tiles below are visited in order, so
// the per-element sum matches matmul(transpose(a), b) bit for bit.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) {
        throw ShapeError("matmul_tn: row counts disagree (" + std::to_string(a.rows) +
                         " vs " + std::to_string(b.rows) + ")");
    }
    Matrix c(a.cols, b.cols, 0.0);
    constexpr std::size_t k_tile = 8;
    constexpr std::size_t col_tile = 256;
    parallel_for(a.cols, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t j0 = 0; j0 < b.cols; j0 += col_tile) {
            const std::size_t width = std::min(b.cols, j0 + col_tile) - j0;
            for (std::size_t k0 = 0; k0 < a.rows; k0 += k_tile) {
                const std::size_t k1 = std::min(a.rows, k0 + k_tile);
                for (std::size_t i = lo; i < hi; ++i) {
                    double* crow = c.row(i) + j0;
                    for (std::size_t k = k0; k < k1; ++k) {
                        const double aki = a.at(k, i);
                        const double* brow = b.row(k) + j0;
                        for (std::size_t j = 0; j < width; ++j) {
                            crow[j] += aki * brow[j];
                        }
                    }
                }
            }
        }
    });
    return c;
}

inline void add_inplace(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("add_inplace: shape mismatch");
    }
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        a.data[i] += b.data[i];
    }
}

inline void scale_inplace(Matrix& a, double s) {
    for (double& v : a.data) {
        v *= s;
    }
}

}  // namespace d2s
