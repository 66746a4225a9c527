#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "d2s/errors.hpp"
#include "d2s/layers.hpp"
#include "d2s/matrix.hpp"

namespace d2s {

struct DistillLossConfig {
    double temperature = 0.001;  // tau, applied to the dense teacher scores
    double mix = 0.5;            // lambda, weight between similarity and regularization terms
    double sparsity_weight = 1e-3;  // eta
    bool hard_labels = false;       // ablation: identity targets instead of dense scores
};

struct DistillLossResult {
    double loss = 0.0;
    Matrix dcaption;  // gradient w.r.t. the (masked) caption batch
    Matrix dimage;    // gradient w.r.t. the image batch
};

namespace detail {

// Soft-label cross-entropy in bits over in-batch candidates, one direction.
// targets[i,j] = softmax_j(dense_scores[i,j] / tau) are constants; the
// gradient w.r.t. the sparse score matrix is (P - T) / (b * ln 2).
inline double directional_loss(const Matrix& sparse_scores, const Matrix& dense_scores,
                               double temperature, bool hard_labels, Matrix& dscores) {
    const std::size_t b = sparse_scores.rows;
    const double ln2 = 0.69314718055994530941723212145818;
    std::vector<double> target(b), logp(b), scaled(b);
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        if (hard_labels) {
            std::fill(target.begin(), target.end(), 0.0);
            target[i] = 1.0;
        } else {
            const double* di = dense_scores.row(i);
            for (std::size_t j = 0; j < b; ++j) {
                scaled[j] = di[j] / temperature;
            }
            stable_softmax(scaled, target);
        }
        const double* si = sparse_scores.row(i);
        log_softmax(std::span<const double>(si, b), logp);
        double row_loss = 0.0;
        double* gi = dscores.row(i);
        for (std::size_t j = 0; j < b; ++j) {
            row_loss += target[j] * logp[j];
            // P - T, filled with P first; T subtracted below
            gi[j] = std::exp(logp[j]) - target[j];
        }
        loss -= row_loss;
    }
    const double scale = 1.0 / (static_cast<double>(b) * ln2);
    for (double& v : dscores.data) {
        v *= scale;
    }
    return loss * scale;  // -(1/b) sum_i sum_j T log2 P
}

}  // namespace detail

// Bidirectional distillation loss with L1 sparsity regularization:
//   loss = (1-lambda) * (l_i2c + l_c2i)
//        + lambda * eta * (mean_row_L1(images) + mean_row_L1(captions))
// where each directional term is a soft cross-entropy in bits between the
// in-batch softmax of sparse scores and the in-batch softmax of dense
// scores scaled by 1/tau. Returns exact analytic gradients w.r.t. both
// sparse batches; the dense batches act as frozen supervision.
inline DistillLossResult distill_loss(const Matrix& captions, const Matrix& images,
                                      const Matrix& dense_captions, const Matrix& dense_images,
                                      const DistillLossConfig& cfg) {
    if (captions.rows != images.rows || captions.cols != images.cols) {
        throw ShapeError("distill_loss: sparse batch shapes disagree");
    }
    if (dense_captions.rows != captions.rows || dense_images.rows != images.rows ||
        dense_captions.cols != dense_images.cols) {
        throw ShapeError("distill_loss: dense batch shapes disagree");
    }
    const std::size_t b = captions.rows;
    if (b < 2) {
        throw ConfigError("distill_loss: batch must have >= 2 rows for in-batch candidates");
    }
    if (cfg.temperature <= 0.0) {
        throw ConfigError("distill_loss: temperature must be > 0");
    }

    DistillLossResult res;
    res.dcaption = Matrix(captions.rows, captions.cols);
    res.dimage = Matrix(images.rows, images.cols);

    const Matrix sparse_c2i = matmul_nt(captions, images);        // caption row x image col
    const Matrix dense_c2i = matmul_nt(dense_captions, dense_images);

    double similarity = 0.0;
    Matrix dscores_c2i(b, b), dscores_i2c(b, b);
    similarity += detail::directional_loss(sparse_c2i, dense_c2i, cfg.temperature,
                                           cfg.hard_labels, dscores_c2i);
    const Matrix sparse_i2c = transpose(sparse_c2i);
    const Matrix dense_i2c = transpose(dense_c2i);
    similarity += detail::directional_loss(sparse_i2c, dense_i2c, cfg.temperature,
                                           cfg.hard_labels, dscores_i2c);

    // Route both directions' gradients through the shared score matrix
    // G = captions * images^T: dG = (1-lambda) * (dscores_c2i + dscores_i2c^T).
    Matrix dscores = dscores_c2i;
    const Matrix i2c_t = transpose(dscores_i2c);
    add_inplace(dscores, i2c_t);
    scale_inplace(dscores, 1.0 - cfg.mix);
    res.dcaption = matmul(dscores, images);
    res.dimage = matmul_tn(dscores, captions);

    // L1 of a nonnegative sparse batch is the plain entry sum, averaged over rows.
    double l1_captions = 0.0, l1_images = 0.0;
    for (double v : captions.data) {
        l1_captions += v;
    }
    for (double v : images.data) {
        l1_images += v;
    }
    l1_captions /= static_cast<double>(b);
    l1_images /= static_cast<double>(b);
    const double reg_grad = cfg.mix * cfg.sparsity_weight / static_cast<double>(b);
    for (double& v : res.dcaption.data) {
        v += reg_grad;
    }
    for (double& v : res.dimage.data) {
        v += reg_grad;
    }

    res.loss = (1.0 - cfg.mix) * similarity +
               cfg.mix * cfg.sparsity_weight * (l1_images + l1_captions);
    if (!std::isfinite(res.loss)) {
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < b; ++j) {
                if (!std::isfinite(sparse_c2i.at(i, j)) || !std::isfinite(dense_c2i.at(i, j))) {
                    throw NumericError("distill_loss: non-finite score for pair (" +
                                       std::to_string(i) + ", " + std::to_string(j) + ")");
                }
            }
        }
        throw NumericError("distill_loss: non-finite loss");
    }
    return res;
}

}  // namespace d2s
