#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "basisloss/data.hpp"
#include "basisloss/model.hpp"
#include "basisloss/numeric.hpp"
#include "basisloss/optimizer.hpp"

namespace basisloss {

/// Pair of dataset rows; target means same speaker.
struct Trial {
    std::size_t a = 0;
    std::size_t b = 0;
    bool target = false;

    friend bool operator==(const Trial&, const Trial&) = default;
};

using TrialList = std::vector<Trial>;
using ScoreSet = std::vector<double>;

inline void validate_trials(const TrialList& trials) {
    std::size_t targets = 0;
    for (const auto& t : trials) {
        if (t.a == t.b) throw DegenerateTrials("trial pairs utterance " + std::to_string(t.a) + " with itself");
        targets += t.target ? 1 : 0;
    }
    if (targets == 0 || targets == trials.size())
        throw DegenerateTrials("trial list needs at least one target and one impostor");
}

/// Deterministic trial list over one split: up to `per_speaker_targets`
/// same-speaker pairs per speaker, and round(impostor_ratio * targets)
/// cross-speaker pairs (capped by what exists). No pair repeats.
inline TrialList make_trials(const Dataset& ds, Split split, std::size_t per_speaker_targets,
                             double impostor_ratio, std::uint64_t seed) {
    std::map<std::size_t, std::vector<std::size_t>> by_speaker;
    for (std::size_t r : ds.indices(split)) by_speaker[ds.labels[r]].push_back(r);
    std::size_t eligible = 0;
    for (const auto& [speaker, rows] : by_speaker) eligible += rows.size() >= 2 ? 1 : 0;
    if (eligible < 2 || by_speaker.size() < 2)
        throw InsufficientData("trials need at least two speakers with two utterances in the " +
                               std::string(split_name(split)) + " split");

    SeededRng rng(seed);
    TrialList trials;
    for (const auto& [speaker, rows] : by_speaker) {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = i + 1; j < rows.size(); ++j) pairs.emplace_back(rows[i], rows[j]);
        const std::size_t take = std::min(per_speaker_targets, pairs.size());
        for (const auto& [a, b] : rng.sample(pairs, take)) trials.push_back({a, b, true});
    }

    const std::size_t n_targets = trials.size();
    std::vector<std::size_t> pool;
    for (const auto& [speaker, rows] : by_speaker) pool.insert(pool.end(), rows.begin(), rows.end());
    std::size_t possible = 0;
    {
        std::size_t seen = 0;
        for (const auto& [speaker, rows] : by_speaker) {
            possible += rows.size() * seen;
            seen += rows.size();
        }
    }
    const auto wanted = static_cast<std::size_t>(std::llround(impostor_ratio * static_cast<double>(n_targets)));
    const std::size_t n_impostors = std::min(std::max<std::size_t>(wanted, 1), possible);

    if (possible <= 4 * n_impostors) {
        std::vector<std::pair<std::size_t, std::size_t>> all;
        for (std::size_t i = 0; i < pool.size(); ++i)
            for (std::size_t j = i + 1; j < pool.size(); ++j)
                if (ds.labels[pool[i]] != ds.labels[pool[j]]) all.emplace_back(pool[i], pool[j]);
        for (const auto& [a, b] : rng.sample(all, n_impostors)) trials.push_back({a, b, false});
    } else {
        std::set<std::pair<std::size_t, std::size_t>> used;
        while (used.size() < n_impostors) {
            std::size_t a = pool[rng.index(pool.size())];
            std::size_t b = pool[rng.index(pool.size())];
            if (ds.labels[a] == ds.labels[b]) continue;
            if (a > b) std::swap(a, b);
            if (!used.insert({a, b}).second) continue;
            trials.push_back({a, b, false});
        }
    }
    return trials;
}

/// Rows scaled to unit L2 norm.
inline Matrix l2_normalized(const Matrix& m) {
    Matrix out = m;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        const double n = checked_norm(out.row(r), "embedding");
        for (double& v : out.row(r)) v /= n;
    }
    return out;
}

/// `embeddings` is indexed by dataset row.
inline ScoreSet cosine_scores(const Matrix& embeddings, const TrialList& trials, bool normalize) {
    const Matrix& src = embeddings;
    Matrix normalized;
    if (normalize) normalized = l2_normalized(embeddings);
    const Matrix& use = normalize ? normalized : src;
    ScoreSet scores;
    scores.reserve(trials.size());
    for (const auto& t : trials) {
        if (t.a >= use.rows() || t.b >= use.rows())
            throw ShapeMismatch("trial references row outside the embedding table");
        scores.push_back(cosine(use.row(t.a), use.row(t.b)));
    }
    return scores;
}

/// [a + b ; a - b ; a * b]
inline Vector bvector_features(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ShapeMismatch("b-vector of embeddings with dims " + std::to_string(a.size()) + " and " +
                            std::to_string(b.size()));
    const std::size_t d = a.size();
    Vector out(3 * d);
    for (std::size_t k = 0; k < d; ++k) {
        out[k] = a[k] + b[k];
        out[d + k] = a[k] - b[k];
        out[2 * d + k] = a[k] * b[k];
    }
    return out;
}

/// Fully connected pair classifier over b-vectors. Output node 0 is
/// "same speaker", node 1 "different speaker".
struct BVectorScorer {
    MlpEncoder net;

    std::size_t embedding_dim() const { return net.input_dim() / 3; }

    double raw_score(std::span<const double> a, std::span<const double> b) const {
        const Vector x = bvector_features(a, b);
        Matrix in(1, x.size(), x);
        const auto [logits, trace] = encoder_forward(net, in);
        return logits(0, 0) - logits(0, 1);
    }

    /// log p(same) - log p(different), averaged over both input orders.
    double score(std::span<const double> a, std::span<const double> b) const {
        return 0.5 * (raw_score(a, b) + raw_score(b, a));
    }
};

struct BVectorSettings {
    std::size_t width_factor = 4;  // hidden width = width_factor * embedding dim
    std::size_t hidden_layers = 3;
    std::size_t steps = 1500;
    std::size_t pairs_per_step = 64;
    double learning_rate = 0.001;
    double leaky_slope = 0.01;
    std::uint64_t seed = 1;
};

inline BVectorScorer make_bvector_scorer(std::size_t embedding_dim, const BVectorSettings& s) {
    if (embedding_dim == 0) throw ShapeMismatch("b-vector scorer needs a positive embedding dim");
    std::vector<std::size_t> dims{3 * embedding_dim};
    for (std::size_t l = 0; l < s.hidden_layers; ++l) dims.push_back(s.width_factor * embedding_dim);
    dims.push_back(2);
    SeededRng rng(derive_seed(s.seed, 0xb0ec));
    return {make_encoder(dims, s.leaky_slope, rng, /*activate_output=*/false)};
}

/// Softmax cross-entropy training on b-vectors of sampled pairs from `rows`.
/// Every sampled pair is presented in both orders.
inline BVectorScorer train_bvector_scorer(const Matrix& embeddings, const std::vector<std::size_t>& labels,
                                          const std::vector<std::size_t>& rows,
                                          const BVectorSettings& s) {
    std::map<std::size_t, std::vector<std::size_t>> by_speaker;
    for (std::size_t r : rows) by_speaker[labels.at(r)].push_back(r);
    std::vector<std::size_t> multi;
    for (const auto& [speaker, rs] : by_speaker)
        if (rs.size() >= 2) multi.push_back(speaker);
    if (multi.empty() || by_speaker.size() < 2)
        throw InsufficientData("b-vector training needs two speakers and a speaker with two utterances");

    const std::size_t d = embeddings.cols();
    BVectorScorer scorer = make_bvector_scorer(d, s);
    OptimizerState opt(OptimizerSettings{OptimizerKind::Adam, s.learning_rate});
    SeededRng rng(derive_seed(s.seed, 0xb0ed));
    const std::size_t half = std::max<std::size_t>(s.pairs_per_step / 2, 1);

    for (std::size_t step = 0; step < s.steps; ++step) {
        Matrix x(4 * half, 3 * d);
        std::vector<int> target(4 * half);
        for (std::size_t p = 0; p < 2 * half; ++p) {
            std::size_t a = 0, b = 0;
            const bool same = p < half;
            if (same) {
                const auto& rs = by_speaker[multi[rng.index(multi.size())]];
                const auto pick = rng.sample(rs, 2);
                a = pick[0];
                b = pick[1];
            } else {
                do {
                    a = rows[rng.index(rows.size())];
                    b = rows[rng.index(rows.size())];
                } while (labels[a] == labels[b]);
            }
            const Vector ab = bvector_features(embeddings.row(a), embeddings.row(b));
            const Vector ba = bvector_features(embeddings.row(b), embeddings.row(a));
            std::copy(ab.begin(), ab.end(), x.row(2 * p).begin());
            std::copy(ba.begin(), ba.end(), x.row(2 * p + 1).begin());
            target[2 * p] = target[2 * p + 1] = same ? 0 : 1;
        }
        const auto [logits, trace] = encoder_forward(scorer.net, x);
        Matrix grad(logits.rows(), 2);
        const double inv = 1.0 / static_cast<double>(logits.rows());
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            const double lse = log_sum_exp(logits.row(i));
            for (std::size_t j = 0; j < 2; ++j) grad(i, j) = inv * std::exp(logits(i, j) - lse);
            grad(i, static_cast<std::size_t>(target[i])) -= inv;
        }
        const auto g = encoder_backward(scorer.net, trace, grad);
        std::vector<ParamSlot> slots;
        for (std::size_t l = 0; l < scorer.net.depth(); ++l) {
            slots.push_back({scorer.net.weights[l].values(), g.weights[l].values(), true});
            slots.push_back({scorer.net.biases[l], g.biases[l], false});
        }
        adam_step(opt, slots);
    }
    return scorer;
}

inline ScoreSet bvector_scores(const BVectorScorer& scorer, const Matrix& embeddings,
                               const TrialList& trials, bool normalize) {
    Matrix normalized;
    if (normalize) normalized = l2_normalized(embeddings);
    const Matrix& use = normalize ? normalized : embeddings;
    ScoreSet scores;
    scores.reserve(trials.size());
    for (const auto& t : trials) scores.push_back(scorer.score(use.row(t.a), use.row(t.b)));
    return scores;
}

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

/// Threshold sweep over every distinct score and +infinity. At threshold t,
/// FRR = share of targets scoring below t and FAR = share of impostors
/// scoring at or above t. Picks the threshold minimizing |FAR - FRR| (lowest
/// on ties) and reports (FAR + FRR) / 2 there.
inline EerResult equal_error_rate(const ScoreSet& scores, const TrialList& trials) {
    if (scores.size() != trials.size())
        throw DegenerateTrials("score count " + std::to_string(scores.size()) +
                               " differs from trial count " + std::to_string(trials.size()));
    std::vector<std::pair<double, bool>> items;
    std::size_t n_target = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw DegenerateTrials("non-finite score");
        items.emplace_back(scores[i], trials[i].target);
        n_target += trials[i].target ? 1 : 0;
    }
    const std::size_t n_impostor = items.size() - n_target;
    if (n_target == 0 || n_impostor == 0)
        throw DegenerateTrials("EER needs at least one target and one impostor trial");
    std::sort(items.begin(), items.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });

    const double nt = static_cast<double>(n_target);
    const double ni = static_cast<double>(n_impostor);
    EerResult best{0.0, 0.0};
    double best_gap = std::numeric_limits<double>::infinity();
    std::size_t targets_below = 0;
    std::size_t impostors_below = 0;
    auto consider = [&](double t) {
        const double frr = static_cast<double>(targets_below) / nt;
        const double far = static_cast<double>(n_impostor - impostors_below) / ni;
        const double gap = std::fabs(far - frr);
        if (gap < best_gap) {
            best_gap = gap;
            best = {(far + frr) / 2.0, t};
        }
    };
    std::size_t i = 0;
    while (i < items.size()) {
        const double t = items[i].first;
        consider(t);
        while (i < items.size() && items[i].first == t) {
            (items[i].second ? targets_below : impostors_below) += 1;
            ++i;
        }
    }
    consider(std::numeric_limits<double>::infinity());
    return best;
}

/// Mean embedding of every speaker in [0, num_speakers) over `rows`.
/// Speakers without rows get a zero row.
inline Matrix speaker_means(const Matrix& embeddings, const std::vector<std::size_t>& labels,
                            const std::vector<std::size_t>& rows, std::size_t num_speakers) {
    Matrix means(num_speakers, embeddings.cols());
    std::vector<std::size_t> counts(num_speakers, 0);
    for (std::size_t r : rows) {
        const std::size_t k = labels.at(r);
        if (k >= num_speakers) continue;
        ++counts[k];
        auto m = means.row(k);
        const auto e = embeddings.row(r);
        for (std::size_t c = 0; c < m.size(); ++c) m[c] += e[c];
    }
    for (std::size_t k = 0; k < num_speakers; ++k)
        if (counts[k] > 0)
            for (double& v : means.row(k)) v /= static_cast<double>(counts[k]);
    return means;
}

struct AlignmentReport {
    std::vector<double> per_speaker;  // cos(W_k, mean embedding of k)
    double mean = 0.0;
    double min = 0.0;
};

/// `speaker_centroids` row k is the mean training embedding of speaker k.
inline AlignmentReport basis_alignment_report(const ClassifierHead& head, const Matrix& speaker_centroids) {
    if (speaker_centroids.rows() != head.num_classes() ||
        speaker_centroids.cols() != head.embedding_dim())
        throw ShapeMismatch("centroid table " + shape_string(speaker_centroids) +
                            " does not match the head's basis matrix");
    AlignmentReport rep;
    rep.min = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < head.num_classes(); ++k) {
        const Vector basis = head.basis.column(k);
        const double c = cosine(basis, speaker_centroids.row(k));
        rep.per_speaker.push_back(c);
        rep.mean += c;
        rep.min = std::min(rep.min, c);
    }
    rep.mean /= static_cast<double>(head.num_classes());
    return rep;
}

struct Histogram {
    std::vector<double> edges;  // bins + 1 edges on [-1, 1]
    std::vector<std::size_t> counts;
    double mean = 0.0;  // mean of the binned values

    std::size_t total() const {
        std::size_t n = 0;
        for (auto c : counts) n += c;
        return n;
    }
};

/// Cosines between rows i != j (ordered pairs) binned uniformly on [-1, 1];
/// the last bin is closed on the right.
inline Histogram impostor_histogram(const Matrix& vectors, std::size_t bins) {
    if (vectors.rows() < 2) throw InsufficientSpeakers("impostor histogram needs at least two vectors");
    if (bins < 2) throw ShapeMismatch("impostor histogram needs at least two bins");
    Histogram h;
    h.counts.assign(bins, 0);
    for (std::size_t b = 0; b <= bins; ++b)
        h.edges.push_back(-1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(bins));
    double sum = 0.0;
    for (std::size_t i = 0; i < vectors.rows(); ++i)
        for (std::size_t j = 0; j < vectors.rows(); ++j) {
            if (i == j) continue;
            const double c = cosine(vectors.row(i), vectors.row(j));
            sum += c;
            auto bin = static_cast<std::size_t>(std::floor((c + 1.0) / 2.0 * static_cast<double>(bins)));
            h.counts[std::min(bin, bins - 1)] += 1;
        }
    const double pairs = static_cast<double>(vectors.rows() * (vectors.rows() - 1));
    h.mean = sum / pairs;
    return h;
}

/// Mean cosine over ordered pairs i != j of rows.
inline double mean_pair_cosine(const Matrix& vectors) {
    if (vectors.rows() < 2) throw InsufficientSpeakers("pair cosine needs at least two vectors");
    double sum = 0.0;
    for (std::size_t i = 0; i < vectors.rows(); ++i)
        for (std::size_t j = 0; j < vectors.rows(); ++j)
            if (i != j) sum += cosine(vectors.row(i), vectors.row(j));
    return sum / static_cast<double>(vectors.rows() * (vectors.rows() - 1));
}

}  // namespace basisloss
