#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "basisloss/model.hpp"
#include "basisloss/numeric.hpp"

namespace basisloss {

/// Embeddings of M utterances (rows) with their speaker labels.
struct EmbeddingBatch {
    Matrix embeddings;  // [M x d]
    std::vector<std::size_t> labels;

    std::size_t size() const noexcept { return embeddings.rows(); }
    std::size_t dim() const noexcept { return embeddings.cols(); }

    void validate(std::size_t num_classes) const {
        if (labels.size() != embeddings.rows())
            throw ShapeMismatch("batch has " + std::to_string(embeddings.rows()) +
                                " embeddings but " + std::to_string(labels.size()) + " labels");
        for (std::size_t y : labels)
            if (y >= num_classes)
                throw ShapeMismatch("label " + std::to_string(y) + " is outside [0, " +
                                    std::to_string(num_classes) + ")");
    }
};

struct CenterStore {
    Matrix centers;  // [N x d], row k is the center of speaker k
    double alpha = 0.5;
    double lambda = 0.001;

    void validate() const {
        if (!(alpha > 0.0 && alpha <= 1.0)) throw ShapeMismatch("center alpha must lie in (0, 1]");
        if (!(lambda >= 0.0)) throw ShapeMismatch("center lambda must be non-negative");
    }
};

struct AmSoftmaxParams {
    double scale = 5.0;
    double margin = 0.35;
};

struct Ge2eParams {
    double w_score = 10.0;
    double b_score = -5.0;

    static constexpr double kMinWeight = 1e-6;
};

struct ScoreGrad {
    double w_score = 0.0;
    double b_score = 0.0;
};

struct LossOutput {
    double value = 0.0;
    Matrix grad_embeddings;              // [M x d]
    std::optional<Matrix> grad_basis;    // [d x N]
    std::optional<Vector> grad_bias;     // [N]
    std::optional<ScoreGrad> grad_score;
};

enum class LossKind { Softmax, Center, AmSoftmax, Ge2e, BetweenClass, HardNegative };

inline constexpr LossKind kAllLosses[] = {LossKind::Softmax,      LossKind::Center,
                                          LossKind::AmSoftmax,    LossKind::Ge2e,
                                          LossKind::BetweenClass, LossKind::HardNegative};

inline std::string_view loss_name(LossKind kind) {
    switch (kind) {
        case LossKind::Softmax: return "softmax";
        case LossKind::Center: return "center";
        case LossKind::AmSoftmax: return "amsoftmax";
        case LossKind::Ge2e: return "ge2e";
        case LossKind::BetweenClass: return "between_class";
        case LossKind::HardNegative: return "hard_negative";
    }
    return "unknown";
}

inline std::optional<LossKind> parse_loss_name(std::string_view name) {
    for (LossKind kind : kAllLosses)
        if (loss_name(kind) == name) return kind;
    return std::nullopt;
}

inline bool is_cosine_loss(LossKind kind) {
    return kind == LossKind::AmSoftmax || kind == LossKind::Ge2e ||
           kind == LossKind::BetweenClass || kind == LossKind::HardNegative;
}

struct LossTerm {
    LossKind kind;
    double weight = 1.0;
};

struct LossComposite {
    std::vector<LossTerm> terms;

    bool contains(LossKind kind) const {
        return std::any_of(terms.begin(), terms.end(),
                           [&](const LossTerm& t) { return t.kind == kind && t.weight > 0.0; });
    }

    void validate() const {
        bool any_positive = false;
        for (const auto& t : terms) {
            if (!(t.weight >= 0.0) || !std::isfinite(t.weight))
                throw ConfigError("loss.terms", "weight of " + std::string(loss_name(t.kind)) +
                                                    " must be a finite non-negative number");
            any_positive = any_positive || t.weight > 0.0;
        }
        if (!any_positive) throw ConfigError("loss.terms", "at least one weight must be positive");
    }
};

namespace detail {

/// Cosines between every embedding row and every basis column, with the norms
/// needed to push gradients back through them.
struct CosineTable {
    Matrix bases;  // [N x d], row j is W_j
    Vector basis_norms;
    Vector embedding_norms;
    Matrix cos;  // [M x N]
};

inline CosineTable cosine_table(const ClassifierHead& head, const Matrix& embeddings) {
    if (embeddings.cols() != head.embedding_dim())
        throw ShapeMismatch("embedding dim " + std::to_string(embeddings.cols()) +
                            " does not match basis rows " + std::to_string(head.embedding_dim()));
    CosineTable t;
    t.bases = head.basis.transposed();
    t.basis_norms.resize(t.bases.rows());
    for (std::size_t j = 0; j < t.bases.rows(); ++j)
        t.basis_norms[j] = checked_norm(t.bases.row(j), "speaker basis");
    t.embedding_norms.resize(embeddings.rows());
    t.cos = Matrix(embeddings.rows(), t.bases.rows());
    for (std::size_t i = 0; i < embeddings.rows(); ++i) {
        t.embedding_norms[i] = checked_norm(embeddings.row(i), "embedding");
        for (std::size_t j = 0; j < t.bases.rows(); ++j)
            t.cos(i, j) = std::clamp(dot(embeddings.row(i), t.bases.row(j)) /
                                         (t.embedding_norms[i] * t.basis_norms[j]),
                                     -1.0, 1.0);
    }
    return t;
}

/// Pushes dL/dcos back to the embeddings and the basis matrix.
inline void cosine_backward(const CosineTable& t, const Matrix& embeddings, const Matrix& grad_cos,
                            Matrix& grad_embeddings, Matrix& grad_basis) {
    Matrix grad_rows(t.bases.rows(), t.bases.cols());
    for (std::size_t i = 0; i < grad_cos.rows(); ++i) {
        for (std::size_t j = 0; j < grad_cos.cols(); ++j) {
            const double g = grad_cos(i, j);
            if (g == 0.0) continue;
            accumulate_cosine_grad(embeddings.row(i), t.bases.row(j), t.cos(i, j),
                                   t.embedding_norms[i], t.basis_norms[j], g,
                                   grad_embeddings.row(i), grad_rows.row(j));
        }
    }
    grad_basis = grad_rows.transposed();
}

inline void check_head(const EmbeddingBatch& emb, const ClassifierHead& head) {
    if (head.num_classes() < 2) throw ShapeMismatch("classifier head needs N >= 2");
    if (emb.dim() != head.embedding_dim())
        throw ShapeMismatch("embedding dim " + std::to_string(emb.dim()) +
                            " does not match basis rows " + std::to_string(head.embedding_dim()));
    emb.validate(head.num_classes());
}

}  // namespace detail

/// Cross-entropy over W_j . e_i + b_j, summed over the batch.
inline LossOutput softmax_loss(const EmbeddingBatch& emb, const ClassifierHead& head) {
    detail::check_head(emb, head);
    const Matrix logits = head_logits(head, emb.embeddings);
    Matrix grad_logits(logits.rows(), logits.cols());
    LossOutput out;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const double lse = log_sum_exp(logits.row(i));
        out.value += lse - logits(i, emb.labels[i]);
        for (std::size_t j = 0; j < logits.cols(); ++j)
            grad_logits(i, j) = std::exp(logits(i, j) - lse);
        grad_logits(i, emb.labels[i]) -= 1.0;
    }
    out.grad_embeddings = matmul_a_bt(grad_logits, head.basis);
    out.grad_basis = matmul_at_b(emb.embeddings, grad_logits);
    if (head.use_bias) {
        Vector gb(logits.cols(), 0.0);
        for (std::size_t i = 0; i < grad_logits.rows(); ++i)
            for (std::size_t j = 0; j < grad_logits.cols(); ++j) gb[j] += grad_logits(i, j);
        out.grad_bias = std::move(gb);
    }
    return out;
}

/// (lambda / 2) sum ||e_i - c_{y_i}||^2. Centers get no gradient.
inline LossOutput center_loss(const EmbeddingBatch& emb, const CenterStore& store) {
    store.validate();
    if (store.centers.cols() != emb.dim())
        throw ShapeMismatch("center dim " + std::to_string(store.centers.cols()) +
                            " does not match embedding dim " + std::to_string(emb.dim()));
    emb.validate(store.centers.rows());
    LossOutput out;
    out.grad_embeddings = Matrix(emb.size(), emb.dim());
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < emb.size(); ++i) {
        const auto e = emb.embeddings.row(i);
        const auto c = store.centers.row(emb.labels[i]);
        auto g = out.grad_embeddings.row(i);
        for (std::size_t k = 0; k < e.size(); ++k) {
            const double diff = e[k] - c[k];
            sum_sq += diff * diff;
            g[k] = store.lambda * diff;
        }
    }
    out.value = 0.5 * store.lambda * sum_sq;
    return out;
}

/// Moves every center present in the batch toward its utterances:
/// delta_k = sum_{y_i = k} (c_k - e_i) / (1 + n_k), c_k <- c_k - alpha * delta_k.
inline CenterStore center_update(const CenterStore& store, const EmbeddingBatch& emb) {
    store.validate();
    if (store.centers.cols() != emb.dim())
        throw ShapeMismatch("center dim " + std::to_string(store.centers.cols()) +
                            " does not match embedding dim " + std::to_string(emb.dim()));
    emb.validate(store.centers.rows());
    const std::size_t d = emb.dim();
    Matrix delta(store.centers.rows(), d);
    std::vector<std::size_t> counts(store.centers.rows(), 0);
    for (std::size_t i = 0; i < emb.size(); ++i) {
        const std::size_t k = emb.labels[i];
        ++counts[k];
        const auto c = store.centers.row(k);
        const auto e = emb.embeddings.row(i);
        auto dk = delta.row(k);
        for (std::size_t t = 0; t < d; ++t) dk[t] += c[t] - e[t];
    }
    CenterStore next = store;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] == 0) continue;
        const double denom = 1.0 + static_cast<double>(counts[k]);
        auto ck = next.centers.row(k);
        const auto dk = delta.row(k);
        for (std::size_t t = 0; t < d; ++t) ck[t] -= store.alpha * (dk[t] / denom);
    }
    return next;
}

/// Additive-margin softmax over s * cos(W_j, e_i), margin m on the target.
inline LossOutput am_softmax_loss(const EmbeddingBatch& emb, const ClassifierHead& head,
                                  const AmSoftmaxParams& p) {
    detail::check_head(emb, head);
    if (!(p.scale > 0.0)) throw ShapeMismatch("AM-softmax scale must be positive");
    if (!(p.margin >= 0.0 && p.margin < 1.0)) throw ShapeMismatch("AM-softmax margin must lie in [0, 1)");
    const auto table = detail::cosine_table(head, emb.embeddings);
    const std::size_t n = head.num_classes();
    Matrix grad_cos(emb.size(), n);
    Vector logits(n);
    LossOutput out;
    for (std::size_t i = 0; i < emb.size(); ++i) {
        const std::size_t y = emb.labels[i];
        for (std::size_t j = 0; j < n; ++j) logits[j] = p.scale * table.cos(i, j);
        logits[y] = p.scale * (table.cos(i, y) - p.margin);
        const double lse = log_sum_exp(logits);
        out.value += lse - logits[y];
        for (std::size_t j = 0; j < n; ++j) {
            const double dz = std::exp(logits[j] - lse) - (j == y ? 1.0 : 0.0);
            grad_cos(i, j) = p.scale * dz;
        }
    }
    out.grad_embeddings = Matrix(emb.size(), emb.dim());
    Matrix grad_basis;
    detail::cosine_backward(table, emb.embeddings, grad_cos, out.grad_embeddings, grad_basis);
    out.grad_basis = std::move(grad_basis);
    return out;
}

/// Per-speaker mean embeddings of a batch, ordered by speaker id.
struct Centroids {
    std::vector<std::size_t> speakers;
    std::vector<std::size_t> counts;
    Matrix values;  // [K x d]

    /// Row of `speaker` in `values`.
    std::size_t slot(std::size_t speaker) const {
        auto it = std::lower_bound(speakers.begin(), speakers.end(), speaker);
        return static_cast<std::size_t>(it - speakers.begin());
    }
};

inline Centroids ge2e_centroids(const EmbeddingBatch& emb) {
    if (emb.size() == 0) throw EmptySpeaker("centroids of an empty batch");
    if (emb.labels.size() != emb.size())
        throw ShapeMismatch("batch labels do not match its embeddings");
    Centroids c;
    c.speakers = emb.labels;
    std::sort(c.speakers.begin(), c.speakers.end());
    c.speakers.erase(std::unique(c.speakers.begin(), c.speakers.end()), c.speakers.end());
    c.counts.assign(c.speakers.size(), 0);
    c.values = Matrix(c.speakers.size(), emb.dim());
    for (std::size_t i = 0; i < emb.size(); ++i) {
        const std::size_t s = c.slot(emb.labels[i]);
        ++c.counts[s];
        auto row = c.values.row(s);
        const auto e = emb.embeddings.row(i);
        for (std::size_t k = 0; k < row.size(); ++k) row[k] += e[k];
    }
    for (std::size_t s = 0; s < c.speakers.size(); ++s) {
        if (c.counts[s] == 0) throw EmptySpeaker("speaker without utterances");
        for (double& v : c.values.row(s)) v /= static_cast<double>(c.counts[s]);
    }
    return c;
}

/// sum over utterances of 1 - sigma(S_pos) + max_{k != own} sigma(S_k), with
/// S = w_score * cos(e, centroid) + b_score. The hardest negative is treated as
/// fixed when differentiating; ties go to the lowest speaker id.
inline LossOutput ge2e_loss(const EmbeddingBatch& emb, const Ge2eParams& p) {
    const Centroids cents = ge2e_centroids(emb);
    const std::size_t k_count = cents.speakers.size();
    if (k_count < 2)
        throw InsufficientSpeakers("GE2E needs at least two speakers in the batch, got " +
                                   std::to_string(k_count));
    Vector centroid_norms(k_count);
    for (std::size_t k = 0; k < k_count; ++k)
        centroid_norms[k] = checked_norm(cents.values.row(k), "centroid");

    LossOutput out;
    out.grad_embeddings = Matrix(emb.size(), emb.dim());
    Matrix grad_centroids(k_count, emb.dim());
    ScoreGrad gs;
    Vector cos_row(k_count);
    for (std::size_t i = 0; i < emb.size(); ++i) {
        const auto e = emb.embeddings.row(i);
        const double ne = checked_norm(e, "embedding");
        const std::size_t own = cents.slot(emb.labels[i]);
        for (std::size_t k = 0; k < k_count; ++k)
            cos_row[k] = std::clamp(dot(e, cents.values.row(k)) / (ne * centroid_norms[k]), -1.0, 1.0);
        std::size_t hardest = own == 0 ? 1 : 0;
        for (std::size_t k = 0; k < k_count; ++k)
            if (k != own && cos_row[k] > cos_row[hardest]) hardest = k;

        const double s_pos = p.w_score * cos_row[own] + p.b_score;
        const double s_neg = p.w_score * cos_row[hardest] + p.b_score;
        const double sig_pos = sigmoid(s_pos);
        const double sig_neg = sigmoid(s_neg);
        out.value += 1.0 - sig_pos + sig_neg;

        const double d_pos = -sig_pos * (1.0 - sig_pos);
        const double d_neg = sig_neg * (1.0 - sig_neg);
        gs.w_score += d_pos * cos_row[own] + d_neg * cos_row[hardest];
        gs.b_score += d_pos + d_neg;
        accumulate_cosine_grad(e, cents.values.row(own), cos_row[own], ne, centroid_norms[own],
                               d_pos * p.w_score, out.grad_embeddings.row(i), grad_centroids.row(own));
        accumulate_cosine_grad(e, cents.values.row(hardest), cos_row[hardest], ne,
                               centroid_norms[hardest], d_neg * p.w_score, out.grad_embeddings.row(i),
                               grad_centroids.row(hardest));
    }
    for (std::size_t i = 0; i < emb.size(); ++i) {
        const std::size_t s = cents.slot(emb.labels[i]);
        const double share = 1.0 / static_cast<double>(cents.counts[s]);
        auto g = out.grad_embeddings.row(i);
        const auto gc = grad_centroids.row(s);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += share * gc[k];
    }
    out.grad_score = gs;
    return out;
}

/// sum_{i != j} cos(W_i, W_j) over ordered pairs of basis columns.
inline LossOutput between_class_loss(const ClassifierHead& head) {
    const std::size_t n = head.num_classes();
    const std::size_t d = head.embedding_dim();
    const Matrix bases = head.basis.transposed();
    Vector norms(n);
    for (std::size_t j = 0; j < n; ++j) norms[j] = checked_norm(bases.row(j), "speaker basis");

    LossOutput out;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) out.value += cosine(bases.row(i), bases.row(j));

    // d/dU_i of sum_{i != j} U_i . U_j is 2 (T - U_i) with T the sum of unit
    // bases; projecting out U_i and dividing by ||W_i|| gives d/dW_i.
    Matrix unit(n, d);
    Vector total(d, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < d; ++k) {
            unit(j, k) = bases(j, k) / norms[j];
            total[k] += unit(j, k);
        }
    Matrix grad(d, n);
    Vector g(d);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < d; ++k) g[k] = 2.0 * (total[k] - unit(j, k));
        const double along = dot(g, unit.row(j));
        for (std::size_t k = 0; k < d; ++k) grad(k, j) = (g[k] - along * unit(j, k)) / norms[j];
    }
    out.grad_embeddings = Matrix();
    out.grad_basis = std::move(grad);
    return out;
}

/// Indices h != target of the min(H, N - 1) largest cosines, in descending
/// order; equal cosines go to the lower index.
inline std::vector<std::size_t> select_top_h(std::span<const double> cosines, std::size_t target,
                                             std::size_t hard_negatives) {
    if (hard_negatives == 0) throw ShapeMismatch("H must be at least 1");
    std::vector<std::size_t> candidates;
    candidates.reserve(cosines.size());
    for (std::size_t h = 0; h < cosines.size(); ++h)
        if (h != target) candidates.push_back(h);
    const std::size_t keep = std::min(hard_negatives, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), [&](std::size_t a, std::size_t b) {
                          if (cosines[a] != cosines[b]) return cosines[a] > cosines[b];
                          return a < b;
                      });
    candidates.resize(keep);
    return candidates;
}

inline std::vector<std::size_t> top_h_bases(const ClassifierHead& head, std::span<const double> e,
                                            std::size_t target, std::size_t hard_negatives) {
    if (hard_negatives == 0) throw ShapeMismatch("H must be at least 1");
    if (target >= head.num_classes()) throw ShapeMismatch("target index outside [0, N)");
    Matrix single(1, e.size());
    std::copy(e.begin(), e.end(), single.row(0).begin());
    const Matrix cos = head_cosines(head, single);
    return select_top_h(cos.row(0), target, hard_negatives);
}

/// sum_i sum_{h in top-H(i)} log(1 + exp(cos(W_h, e_i) - cos(W_{y_i}, e_i))).
/// The top-H sets are mined from the inputs of this call and held fixed for
/// differentiation.
inline LossOutput hard_negative_loss(const EmbeddingBatch& emb, const ClassifierHead& head,
                                     std::size_t hard_negatives) {
    detail::check_head(emb, head);
    if (hard_negatives == 0) throw ShapeMismatch("H must be at least 1");
    const auto table = detail::cosine_table(head, emb.embeddings);
    Matrix grad_cos(emb.size(), head.num_classes());
    LossOutput out;
    for (std::size_t i = 0; i < emb.size(); ++i) {
        const std::size_t y = emb.labels[i];
        const auto row = table.cos.row(i);
        for (std::size_t h : select_top_h(row, y, hard_negatives)) {
            const double gap = row[h] - row[y];
            out.value += softplus(gap);
            const double g = sigmoid(gap);
            grad_cos(i, h) += g;
            grad_cos(i, y) -= g;
        }
    }
    out.grad_embeddings = Matrix(emb.size(), emb.dim());
    Matrix grad_basis;
    detail::cosine_backward(table, emb.embeddings, grad_cos, out.grad_embeddings, grad_basis);
    out.grad_basis = std::move(grad_basis);
    return out;
}

/// Everything a composite may need. Pointers that a term needs must be set.
struct LossInputs {
    const EmbeddingBatch* batch = nullptr;
    const ClassifierHead* head = nullptr;
    const CenterStore* centers = nullptr;
    AmSoftmaxParams am{};
    Ge2eParams ge2e{};
    std::size_t hard_negatives = 100;
};

struct CompositeOutput {
    LossOutput total;
    std::vector<std::pair<LossKind, double>> components;  // unweighted values
};

inline LossOutput evaluate_loss(LossKind kind, const LossInputs& in) {
    auto need = [&](const void* ptr, const char* what) {
        if (ptr == nullptr)
            throw ShapeMismatch(std::string(loss_name(kind)) + " loss needs " + what);
    };
    switch (kind) {
        case LossKind::Softmax:
            need(in.batch, "a batch");
            need(in.head, "a classifier head");
            return softmax_loss(*in.batch, *in.head);
        case LossKind::Center:
            need(in.batch, "a batch");
            need(in.centers, "a center store");
            return center_loss(*in.batch, *in.centers);
        case LossKind::AmSoftmax:
            need(in.batch, "a batch");
            need(in.head, "a classifier head");
            return am_softmax_loss(*in.batch, *in.head, in.am);
        case LossKind::Ge2e:
            need(in.batch, "a batch");
            return ge2e_loss(*in.batch, in.ge2e);
        case LossKind::BetweenClass:
            need(in.head, "a classifier head");
            return between_class_loss(*in.head);
        case LossKind::HardNegative:
            need(in.batch, "a batch");
            need(in.head, "a classifier head");
            return hard_negative_loss(*in.batch, *in.head, in.hard_negatives);
    }
    throw ShapeMismatch("unknown loss kind");
}

namespace detail {

inline void add_scaled(Matrix& into, const Matrix& from, double weight) {
    if (into.empty()) into = Matrix(from.rows(), from.cols());
    if (!into.same_shape(from)) throw ShapeMismatch("composite gradients disagree in shape");
    auto dst = into.values();
    const auto src = from.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += weight * src[k];
}

}  // namespace detail

/// Weighted sum of the composite's terms; zero-weight terms are skipped.
inline CompositeOutput compose(const LossComposite& losses, const LossInputs& in) {
    losses.validate();
    CompositeOutput out;
    if (in.batch != nullptr) out.total.grad_embeddings = Matrix(in.batch->size(), in.batch->dim());
    for (const auto& term : losses.terms) {
        if (term.weight == 0.0) continue;
        LossOutput part = evaluate_loss(term.kind, in);
        out.components.emplace_back(term.kind, part.value);
        out.total.value += term.weight * part.value;
        if (!part.grad_embeddings.empty())
            detail::add_scaled(out.total.grad_embeddings, part.grad_embeddings, term.weight);
        if (part.grad_basis) {
            if (!out.total.grad_basis) out.total.grad_basis = Matrix();
            detail::add_scaled(*out.total.grad_basis, *part.grad_basis, term.weight);
        }
        if (part.grad_bias) {
            if (!out.total.grad_bias) out.total.grad_bias = Vector(part.grad_bias->size(), 0.0);
            for (std::size_t j = 0; j < part.grad_bias->size(); ++j)
                (*out.total.grad_bias)[j] += term.weight * (*part.grad_bias)[j];
        }
        if (part.grad_score) {
            if (!out.total.grad_score) out.total.grad_score = ScoreGrad{};
            out.total.grad_score->w_score += term.weight * part.grad_score->w_score;
            out.total.grad_score->b_score += term.weight * part.grad_score->b_score;
        }
    }
    return out;
}

}  // namespace basisloss
