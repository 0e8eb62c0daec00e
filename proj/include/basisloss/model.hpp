#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "basisloss/numeric.hpp"

namespace basisloss {

/// Fully connected embedding extractor. Layer l maps rows of width
/// layer_dims[l] to width layer_dims[l + 1] through x * weights[l] + biases[l]
/// followed by a leaky ReLU. The last layer is activated only when
/// `activate_output` is set.
struct MlpEncoder {
    std::vector<std::size_t> layer_dims;
    std::vector<Matrix> weights;  // [in x out]
    std::vector<Vector> biases;   // [out]
    double leaky_slope = 0.01;
    bool activate_output = true;

    std::size_t depth() const noexcept { return weights.size(); }
    std::size_t input_dim() const noexcept { return layer_dims.front(); }
    std::size_t output_dim() const noexcept { return layer_dims.back(); }

    bool activates(std::size_t layer) const noexcept {
        return layer + 1 < depth() || activate_output;
    }

    void validate() const {
        if (layer_dims.size() < 2) throw ShapeMismatch("encoder needs at least one layer");
        if (weights.size() + 1 != layer_dims.size() || biases.size() != weights.size())
            throw ShapeMismatch("encoder parameter lists do not match layer_dims");
        for (std::size_t l = 0; l < weights.size(); ++l) {
            if (weights[l].rows() != layer_dims[l] || weights[l].cols() != layer_dims[l + 1] ||
                biases[l].size() != layer_dims[l + 1])
                throw ShapeMismatch("encoder layer " + std::to_string(l) +
                                    " does not compose with layer_dims");
        }
    }
};

/// Output layer whose column j is the basis vector of speaker j.
struct ClassifierHead {
    Matrix basis;  // [embedding_dim x N]
    Vector bias;   // [N]
    bool use_bias = true;

    std::size_t embedding_dim() const noexcept { return basis.rows(); }
    std::size_t num_classes() const noexcept { return basis.cols(); }
};

struct ForwardTrace {
    std::vector<Matrix> inputs;           // input of each layer
    std::vector<Matrix> pre_activations;  // x * W + b of each layer

    std::size_t depth() const noexcept { return inputs.size(); }
};

struct ParameterGradients {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    Matrix features;  // gradient with respect to the encoder input
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline void glorot_fill(Matrix& m, std::size_t fan_in, std::size_t fan_out, SeededRng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : m.values()) v = rng.uniform(-limit, limit);
}

inline MlpEncoder make_encoder(std::vector<std::size_t> layer_dims, double leaky_slope,
                               SeededRng& rng, bool activate_output = true) {
    MlpEncoder enc;
    enc.layer_dims = std::move(layer_dims);
    enc.leaky_slope = leaky_slope;
    enc.activate_output = activate_output;
    if (enc.layer_dims.size() < 2) throw ShapeMismatch("encoder needs at least one layer");
    for (std::size_t l = 0; l + 1 < enc.layer_dims.size(); ++l) {
        Matrix w(enc.layer_dims[l], enc.layer_dims[l + 1]);
        glorot_fill(w, enc.layer_dims[l], enc.layer_dims[l + 1], rng);
        enc.weights.push_back(std::move(w));
        enc.biases.emplace_back(enc.layer_dims[l + 1], 0.0);
    }
    return enc;
}

inline ClassifierHead make_head(std::size_t embedding_dim, std::size_t num_classes, bool use_bias,
                                SeededRng& rng) {
    if (num_classes < 2) throw ShapeMismatch("classifier head needs at least two classes");
    ClassifierHead head{Matrix(embedding_dim, num_classes), Vector(num_classes, 0.0), use_bias};
    glorot_fill(head.basis, embedding_dim, num_classes, rng);
    return head;
}

inline std::pair<Matrix, ForwardTrace> encoder_forward(const MlpEncoder& enc,
                                                       const Matrix& features) {
    enc.validate();
    if (features.cols() != enc.input_dim())
        throw ShapeMismatch("features have " + std::to_string(features.cols()) +
                            " columns, encoder expects " + std::to_string(enc.input_dim()));
    ForwardTrace trace;
    Matrix current = features;
    for (std::size_t l = 0; l < enc.depth(); ++l) {
        Matrix z = matmul(current, enc.weights[l]);
        for (std::size_t r = 0; r < z.rows(); ++r) {
            auto row = z.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] += enc.biases[l][c];
        }
        Matrix a = z;
        if (enc.activates(l)) {
            for (double& v : a.values())
                if (v < 0.0) v *= enc.leaky_slope;
        }
        trace.inputs.push_back(std::move(current));
        trace.pre_activations.push_back(std::move(z));
        current = std::move(a);
    }
    return {std::move(current), std::move(trace)};
}

inline ParameterGradients encoder_backward(const MlpEncoder& enc, const ForwardTrace& trace,
                                           const Matrix& grad_output) {
    if (trace.depth() != enc.depth()) throw ShapeMismatch("trace depth differs from encoder depth");
    const Matrix& last = trace.pre_activations.back();
    if (!grad_output.same_shape(last))
        throw ShapeMismatch("upstream gradient " + shape_string(grad_output) +
                            " does not match encoder output " + shape_string(last));
    ParameterGradients grads;
    grads.weights.resize(enc.depth());
    grads.biases.resize(enc.depth());
    Matrix upstream = grad_output;
    for (std::size_t l = enc.depth(); l-- > 0;) {
        if (enc.activates(l)) {
            const auto z = trace.pre_activations[l].values();
            auto g = upstream.values();
            for (std::size_t k = 0; k < g.size(); ++k)
                if (z[k] < 0.0) g[k] *= enc.leaky_slope;
        }
        grads.weights[l] = matmul_at_b(trace.inputs[l], upstream);
        Vector db(upstream.cols(), 0.0);
        for (std::size_t r = 0; r < upstream.rows(); ++r) {
            auto row = upstream.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
        }
        grads.biases[l] = std::move(db);
        upstream = matmul_a_bt(upstream, enc.weights[l]);
    }
    grads.features = std::move(upstream);
    return grads;
}

/// logits[i][j] = W_j . e_i + b_j
inline Matrix head_logits(const ClassifierHead& head, const Matrix& embeddings) {
    if (embeddings.cols() != head.embedding_dim())
        throw ShapeMismatch("embedding dim " + std::to_string(embeddings.cols()) +
                            " does not match basis rows " + std::to_string(head.embedding_dim()));
    Matrix logits = matmul(embeddings, head.basis);
    if (head.use_bias) {
        if (head.bias.size() != head.num_classes()) throw ShapeMismatch("bias length differs from N");
        for (std::size_t i = 0; i < logits.rows(); ++i)
            for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) += head.bias[j];
    }
    return logits;
}

/// entry [i][j] = cos(W_j, e_i)
inline Matrix head_cosines(const ClassifierHead& head, const Matrix& embeddings) {
    if (embeddings.cols() != head.embedding_dim())
        throw ShapeMismatch("embedding dim " + std::to_string(embeddings.cols()) +
                            " does not match basis rows " + std::to_string(head.embedding_dim()));
    const Matrix bases = head.basis.transposed();
    Vector basis_norms(bases.rows());
    for (std::size_t j = 0; j < bases.rows(); ++j)
        basis_norms[j] = checked_norm(bases.row(j), "speaker basis");
    Matrix out(embeddings.rows(), bases.rows());
    for (std::size_t i = 0; i < embeddings.rows(); ++i) {
        const double ne = checked_norm(embeddings.row(i), "embedding");
        for (std::size_t j = 0; j < bases.rows(); ++j)
            out(i, j) = std::clamp(dot(embeddings.row(i), bases.row(j)) / (ne * basis_norms[j]),
                                   -1.0, 1.0);
    }
    return out;
}

}  // namespace basisloss
