#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "d2s/errors.hpp"
#include "d2s/io_util.hpp"
#include "d2s/layers.hpp"
#include "d2s/matrix.hpp"
#include "d2s/rng.hpp"
#include "d2s/sparse_vector.hpp"

namespace d2s {

// Trainable state of the sparse projection head:
//   input  -> w1 (omega x d) -> layernorm(gamma, beta) -> w2 (vocab x omega)
//   -> log(1 + max(0, .))
struct ProjectionParams {
    std::size_t input_dim = 0;   // d
    std::size_t hidden_dim = 0;  // omega
    std::size_t vocab_size = 0;  // |V|
    double eps = 1e-5;

    Matrix w1;                  // hidden_dim x input_dim
    std::vector<double> gamma;  // hidden_dim
    std::vector<double> beta;   // hidden_dim
    Matrix w2;                  // vocab_size x hidden_dim

    std::size_t parameter_count() const {
        return w1.size() + gamma.size() + beta.size() + w2.size();
    }

    void validate() const {
        if (hidden_dim < 2) {
            throw ConfigError("projection: hidden width must be >= 2 (row variance is degenerate otherwise)");
        }
        if (input_dim < 1 || vocab_size < 1) {
            throw ConfigError("projection: input_dim and vocab_size must be >= 1");
        }
        if (eps <= 0.0) {
            throw ConfigError("projection: layernorm eps must be > 0");
        }
        if (w1.rows != hidden_dim || w1.cols != input_dim || w2.rows != vocab_size ||
            w2.cols != hidden_dim || gamma.size() != hidden_dim || beta.size() != hidden_dim) {
            throw ShapeError("projection: parameter shapes inconsistent with declared dims");
        }
        require_finite(w1, "w1");
        require_finite(w2, "w2");
        for (double v : gamma) {
            if (!std::isfinite(v)) throw NumericError("non-finite value in gamma");
        }
        for (double v : beta) {
            if (!std::isfinite(v)) throw NumericError("non-finite value in beta");
        }
    }

    // Flat view in checkpoint order: w1, gamma, beta, w2.
    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(parameter_count());
        out.insert(out.end(), w1.data.begin(), w1.data.end());
        out.insert(out.end(), gamma.begin(), gamma.end());
        out.insert(out.end(), beta.begin(), beta.end());
        out.insert(out.end(), w2.data.begin(), w2.data.end());
        return out;
    }

    void unflatten(std::span<const double> flat) {
        if (flat.size() != parameter_count()) {
            throw ShapeError("projection: flat parameter length mismatch");
        }
        std::size_t off = 0;
        std::copy(flat.begin() + off, flat.begin() + off + w1.size(), w1.data.begin());
        off += w1.size();
        std::copy(flat.begin() + off, flat.begin() + off + gamma.size(), gamma.begin());
        off += gamma.size();
        std::copy(flat.begin() + off, flat.begin() + off + beta.size(), beta.begin());
        off += beta.size();
        std::copy(flat.begin() + off, flat.begin() + off + w2.size(), w2.data.begin());
    }
};

// w1 ~ U[-1/sqrt(d), 1/sqrt(d)), gamma = 1, beta = 0, and w2 either copied
// from the provided vocabulary embeddings or ~ U[-1/sqrt(omega), 1/sqrt(omega)).
// Draw order is fixed (w1 row-major, then w2 row-major) so the same seed
// reproduces the same parameters bit for bit.
inline ProjectionParams init_params(std::size_t input_dim, std::size_t hidden_dim,
                                    std::size_t vocab_size, std::uint64_t seed,
                                    const Matrix* vocab_embeddings = nullptr) {
    ProjectionParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    p.vocab_size = vocab_size;
    p.w1 = Matrix(hidden_dim, input_dim);
    p.gamma.assign(hidden_dim, 1.0);
    p.beta.assign(hidden_dim, 0.0);
    p.w2 = Matrix(vocab_size, hidden_dim);
    if (hidden_dim < 2) {
        throw ConfigError("init_params: hidden width must be >= 2");
    }
    if (input_dim < 1 || vocab_size < 1) {
        throw ConfigError("init_params: input_dim and vocab_size must be >= 1");
    }

    Rng rng(derive_seed(seed, "projection-init"));
    const double b1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
    for (double& v : p.w1.data) {
        v = rng.uniform(-b1, b1);
    }
    if (vocab_embeddings != nullptr) {
        if (vocab_embeddings->rows != vocab_size || vocab_embeddings->cols != hidden_dim) {
            throw ShapeError("init_params: vocabulary embedding matrix must be " +
                             std::to_string(vocab_size) + "x" + std::to_string(hidden_dim) +
                             ", got " + std::to_string(vocab_embeddings->rows) + "x" +
                             std::to_string(vocab_embeddings->cols));
        }
        p.w2 = *vocab_embeddings;
    } else {
        const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
        for (double& v : p.w2.data) {
            v = rng.uniform(-b2, b2);
        }
    }
    p.validate();
    return p;
}

// Batch intermediates kept for the backward pass.
struct ForwardCache {
    Matrix input;           // batch x d
    Matrix hidden;          // batch x omega, pre-normalization
    LayerNormCache ln;
    Matrix normalized;      // batch x omega, post-affine
    Matrix pre_activation;  // batch x vocab
};

// Applies the head to a batch of dense rows; every output entry is >= 0.
inline Matrix project_forward(const ProjectionParams& p, const Matrix& input,
                              ForwardCache* cache = nullptr) {
    if (input.cols != p.input_dim) {
        throw ShapeError("project_forward: input has " + std::to_string(input.cols) +
                         " columns, head expects " + std::to_string(p.input_dim));
    }
    Matrix hidden = matmul_nt(input, p.w1);  // batch x omega
    require_finite(hidden, "projection hidden layer");
    LayerNormCache ln;
    Matrix normalized = layer_norm_forward(hidden, p.gamma, p.beta, p.eps,
                                           cache != nullptr ? &ln : nullptr);
    require_finite(normalized, "projection layernorm output");
    Matrix pre_activation = matmul_nt(normalized, p.w2);  // batch x vocab
    require_finite(pre_activation, "projection vocabulary logits");
    Matrix out = log1p_relu(pre_activation);
    if (cache != nullptr) {
        cache->input = input;
        cache->hidden = std::move(hidden);
        cache->ln = std::move(ln);
        cache->normalized = std::move(normalized);
        cache->pre_activation = std::move(pre_activation);
    }
    return out;
}

struct ProjectionGrads {
    Matrix dw1;
    std::vector<double> dgamma;
    std::vector<double> dbeta;
    Matrix dw2;
    Matrix dinput;  // diagnostics only; dense encoders stay frozen

    void add(const ProjectionGrads& o) {
        add_inplace(dw1, o.dw1);
        add_inplace(dw2, o.dw2);
        for (std::size_t i = 0; i < dgamma.size(); ++i) dgamma[i] += o.dgamma[i];
        for (std::size_t i = 0; i < dbeta.size(); ++i) dbeta[i] += o.dbeta[i];
        add_inplace(dinput, o.dinput);
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(dw1.size() + dgamma.size() + dbeta.size() + dw2.size());
        out.insert(out.end(), dw1.data.begin(), dw1.data.end());
        out.insert(out.end(), dgamma.begin(), dgamma.end());
        out.insert(out.end(), dbeta.begin(), dbeta.end());
        out.insert(out.end(), dw2.data.begin(), dw2.data.end());
        return out;
    }
};

// Exact analytic gradients of the composed head for a batch.
// compute_dinput can be switched off in the training loop where dinput is
// never consumed.
inline ProjectionGrads project_backward(const ProjectionParams& p, const ForwardCache& cache,
                                        const Matrix& doutput, bool compute_dinput = true) {
    if (doutput.rows != cache.pre_activation.rows || doutput.cols != cache.pre_activation.cols) {
        throw ShapeError("project_backward: gradient shape does not match cached forward");
    }
    ProjectionGrads g;
    const Matrix dpre = log1p_relu_backward(cache.pre_activation, doutput);
    g.dw2 = matmul_tn(dpre, cache.normalized);     // vocab x omega
    const Matrix dnorm = matmul(dpre, p.w2);       // batch x omega
    LayerNormGrads ln = layer_norm_backward(cache.ln, dnorm);
    g.dgamma = std::move(ln.dgamma);
    g.dbeta = std::move(ln.dbeta);
    g.dw1 = matmul_tn(ln.dx, cache.input);         // omega x d
    if (compute_dinput) {
        g.dinput = matmul(ln.dx, p.w1);            // batch x d
    } else {
        g.dinput = Matrix(doutput.rows, p.input_dim);
    }
    return g;
}

// --- checkpoint format ---------------------------------------------------
// "D2SP" | u32 version=1 | u32 d | u32 omega | u32 vocab | f32 eps |
// w1 row-major f32 | gamma f32 | beta f32 | w2 row-major f32. No padding.
// Values are stored in f32; load widens back to the f64 training masters, so
// save -> load -> save reproduces the file byte for byte.

inline constexpr char kCheckpointMagic[4] = {'D', '2', 'S', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const ProjectionParams& p, const std::string& path) {
    p.validate();
    BinaryWriter w(path);
    w.write_magic(kCheckpointMagic);
    w.write_u32(kCheckpointVersion);
    w.write_u32(static_cast<std::uint32_t>(p.input_dim));
    w.write_u32(static_cast<std::uint32_t>(p.hidden_dim));
    w.write_u32(static_cast<std::uint32_t>(p.vocab_size));
    w.write_f32(static_cast<float>(p.eps));
    auto write_mat = [&w](const Matrix& m) {
        for (double v : m.data) {
            w.write_f32(static_cast<float>(v));
        }
    };
    write_mat(p.w1);
    for (double v : p.gamma) w.write_f32(static_cast<float>(v));
    for (double v : p.beta) w.write_f32(static_cast<float>(v));
    write_mat(p.w2);
    w.commit();
}

inline ProjectionParams load_checkpoint(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic(kCheckpointMagic, "projection checkpoint");
    r.expect_version(kCheckpointVersion, "projection checkpoint");
    ProjectionParams p;
    p.input_dim = r.read_u32();
    p.hidden_dim = r.read_u32();
    p.vocab_size = r.read_u32();
    p.eps = r.read_f32();
    if (p.input_dim < 1 || p.hidden_dim < 2 || p.vocab_size < 1) {
        throw FormatError(path + ": invalid header dimensions (d=" + std::to_string(p.input_dim) +
                          ", omega=" + std::to_string(p.hidden_dim) +
                          ", vocab=" + std::to_string(p.vocab_size) + ")");
    }
    p.w1 = Matrix(p.hidden_dim, p.input_dim);
    p.gamma.resize(p.hidden_dim);
    p.beta.resize(p.hidden_dim);
    p.w2 = Matrix(p.vocab_size, p.hidden_dim);
    auto read_into = [&r, &path](double* dst, std::size_t n, const char* field) {
        try {
            for (std::size_t i = 0; i < n; ++i) {
                dst[i] = static_cast<double>(r.read_f32());
            }
        } catch (const FormatError&) {
            throw FormatError(path + ": payload shorter than header dimensions while reading " +
                             field);
        }
    };
    read_into(p.w1.data.data(), p.w1.size(), "w1");
    read_into(p.gamma.data(), p.gamma.size(), "gamma");
    read_into(p.beta.data(), p.beta.size(), "beta");
    read_into(p.w2.data.data(), p.w2.size(), "w2");
    if (!r.at_eof()) {
        throw FormatError(path + ": trailing bytes after parameter payload");
    }
    p.validate();
    return p;
}

}  // namespace d2s
