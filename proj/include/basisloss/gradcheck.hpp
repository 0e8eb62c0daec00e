#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "basisloss/losses.hpp"
#include "basisloss/numeric.hpp"

namespace basisloss {

/// One loss evaluated at a random configuration. Only the blocks flagged as
/// free take part in differentiation; the rest are held fixed.
struct LossProblem {
    LossKind kind = LossKind::Softmax;
    EmbeddingBatch batch;
    ClassifierHead head;
    CenterStore centers;
    AmSoftmaxParams am;
    Ge2eParams ge2e;
    std::size_t hard_negatives = 1;

    bool free_embeddings = false;
    bool free_basis = false;
    bool free_bias = false;
    bool free_score = false;

    LossInputs inputs() const {
        LossInputs in;
        in.batch = &batch;
        in.head = &head;
        in.centers = &centers;
        in.am = am;
        in.ge2e = ge2e;
        in.hard_negatives = hard_negatives;
        return in;
    }

    Vector pack() const {
        Vector x;
        if (free_embeddings) x.insert(x.end(), batch.embeddings.values().begin(), batch.embeddings.values().end());
        if (free_basis) x.insert(x.end(), head.basis.values().begin(), head.basis.values().end());
        if (free_bias) x.insert(x.end(), head.bias.begin(), head.bias.end());
        if (free_score) {
            x.push_back(ge2e.w_score);
            x.push_back(ge2e.b_score);
        }
        return x;
    }

    LossProblem with(std::span<const double> x) const {
        LossProblem p = *this;
        std::size_t at = 0;
        auto take = [&](std::span<double> dst) {
            std::copy(x.begin() + static_cast<std::ptrdiff_t>(at),
                      x.begin() + static_cast<std::ptrdiff_t>(at + dst.size()), dst.begin());
            at += dst.size();
        };
        if (free_embeddings) take(p.batch.embeddings.values());
        if (free_basis) take(p.head.basis.values());
        if (free_bias) take(p.head.bias);
        if (free_score) {
            p.ge2e.w_score = x[at++];
            p.ge2e.b_score = x[at++];
        }
        return p;
    }

    double value() const { return evaluate_loss(kind, inputs()).value; }

    /// Analytic gradient in pack() layout; absent gradients count as zero.
    Vector gradient() const {
        const LossOutput out = evaluate_loss(kind, inputs());
        Vector g;
        auto append = [&](std::span<const double> src, std::size_t n) {
            if (src.empty()) g.insert(g.end(), n, 0.0);
            else g.insert(g.end(), src.begin(), src.end());
        };
        if (free_embeddings) append(out.grad_embeddings.values(), batch.embeddings.size());
        if (free_basis) append(out.grad_basis ? out.grad_basis->values() : std::span<const double>{}, head.basis.size());
        if (free_bias) append(out.grad_bias ? std::span<const double>(*out.grad_bias) : std::span<const double>{}, head.bias.size());
        if (free_score) {
            g.push_back(out.grad_score ? out.grad_score->w_score : 0.0);
            g.push_back(out.grad_score ? out.grad_score->b_score : 0.0);
        }
        return g;
    }
};

namespace detail {

/// Smallest distance between the k-th and (k+1)-th largest entry of `row`
/// excluding `skip`, for every k in `ranks`.
inline double rank_gap(std::span<const double> row, std::size_t skip, std::size_t rank) {
    std::vector<double> v;
    for (std::size_t j = 0; j < row.size(); ++j)
        if (j != skip) v.push_back(row[j]);
    std::sort(v.begin(), v.end(), std::greater<>());
    if (rank >= v.size()) return std::numeric_limits<double>::infinity();
    return v[rank - 1] - v[rank];
}

/// Keeps random configurations away from the argmax / top-H switching points
/// and from the cosine clamp, where the loss is not differentiable.
inline bool well_conditioned(const LossProblem& p) {
    constexpr double kGap = 1e-4;
    auto cos_ok = [&](const Matrix& cos) {
        for (double c : cos.values())
            if (std::fabs(c) > 1.0 - 1e-6) return false;
        return true;
    };
    if (p.kind == LossKind::HardNegative) {
        const Matrix cos = head_cosines(p.head, p.batch.embeddings);
        if (!cos_ok(cos)) return false;
        for (std::size_t i = 0; i < cos.rows(); ++i)
            if (rank_gap(cos.row(i), p.batch.labels[i], p.hard_negatives) < kGap) return false;
    }
    if (p.kind == LossKind::Ge2e) {
        const Centroids c = ge2e_centroids(p.batch);
        for (std::size_t i = 0; i < p.batch.size(); ++i) {
            Vector row;
            for (std::size_t k = 0; k < c.speakers.size(); ++k)
                row.push_back(cosine(p.batch.embeddings.row(i), c.values.row(k)));
            if (rank_gap(row, c.slot(p.batch.labels[i]), 1) < kGap) return false;
        }
    }
    if (p.kind == LossKind::AmSoftmax)
        return cos_ok(head_cosines(p.head, p.batch.embeddings));
    return true;
}

inline void fill_normal(std::span<double> xs, SeededRng& rng, double scale) {
    for (double& v : xs) v = scale * rng.normal();
}

}  // namespace detail

/// Random, well-conditioned instance of `kind` (M = 8, d = 5, N = 6).
inline LossProblem random_loss_problem(LossKind kind, SeededRng& rng) {
    constexpr std::size_t kM = 8, kD = 5, kN = 6;
    for (int attempt = 0; attempt < 10000; ++attempt) {
        LossProblem p;
        p.kind = kind;
        p.batch.embeddings = Matrix(kM, kD);
        detail::fill_normal(p.batch.embeddings.values(), rng, 1.0);
        p.batch.labels.resize(kM);
        if (kind == LossKind::Ge2e) {
            for (std::size_t i = 0; i < kM; ++i) p.batch.labels[i] = i / 2;  // 4 speakers x 2
        } else {
            for (auto& y : p.batch.labels) y = rng.index(kN);
        }
        p.head = ClassifierHead{Matrix(kD, kN), Vector(kN), kind == LossKind::Softmax};
        detail::fill_normal(p.head.basis.values(), rng, 1.0);
        detail::fill_normal(p.head.bias, rng, 0.5);
        p.centers = CenterStore{Matrix(kN, kD), 0.5, rng.uniform(0.001, 2.0)};
        detail::fill_normal(p.centers.centers.values(), rng, 1.0);
        p.am = AmSoftmaxParams{rng.uniform(1.0, 10.0), rng.uniform(0.0, 0.5)};
        p.ge2e = Ge2eParams{rng.uniform(1.0, 10.0), rng.uniform(-5.0, 1.0)};
        p.hard_negatives = 1 + rng.index(kN - 1);

        switch (kind) {
            case LossKind::Softmax: p.free_embeddings = p.free_basis = p.free_bias = true; break;
            case LossKind::Center: p.free_embeddings = true; break;
            case LossKind::AmSoftmax: p.free_embeddings = p.free_basis = true; break;
            case LossKind::Ge2e: p.free_embeddings = p.free_score = true; break;
            case LossKind::BetweenClass: p.free_basis = true; break;
            case LossKind::HardNegative: p.free_embeddings = p.free_basis = true; break;
        }
        if (detail::well_conditioned(p)) return p;
    }
    throw InsufficientData("could not draw a well-conditioned configuration");
}

struct GradCheckResult {
    std::string name;
    std::vector<double> errors;  // relative error per configuration
    double max_error = 0.0;
    bool pass = false;
};

struct GradCheckReport {
    std::uint64_t seed = 0;
    double tolerance = 1e-6;
    double step = 1e-6;
    std::vector<GradCheckResult> results;

    bool pass() const {
        return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.pass; });
    }

    std::string to_text() const {
        std::string out = "# gradient check: central differences h=" + shortest_text(step) +
                          ", tolerance " + shortest_text(tolerance) + ", seed " + std::to_string(seed) + "\n";
        char line[160];
        for (const auto& r : results) {
            std::snprintf(line, sizeof line, "%-14s configs=%zu max_rel_error=%.3e %s\n", r.name.c_str(),
                          r.errors.size(), r.max_error, r.pass ? "PASS" : "FAIL");
            out += line;
        }
        out += pass() ? "overall PASS\n" : "overall FAIL\n";
        return out;
    }
};

struct GradCheckOptions {
    std::size_t configurations = 10;
    double step = 1e-6;
    double tolerance = 1e-6;
    /// Test hook: multiply this loss's analytic gradient by (1 + corruption).
    std::optional<LossKind> corrupt;
    double corruption = 1e-2;
};

/// Compares analytic and central-difference gradients of `problem`.
inline double gradient_error(const LossProblem& problem, double h, double corruption = 0.0) {
    const Vector x = problem.pack();
    Vector analytic = problem.gradient();
    for (double& g : analytic) g *= 1.0 + corruption;
    const Vector numeric =
        finite_difference_gradient([&](std::span<const double> p) { return problem.with(p).value(); }, x, h);
    return relative_error(analytic, numeric);
}

/// Every loss at `configurations` seeded random points.
inline GradCheckReport gradcheck_suite(std::uint64_t seed, const GradCheckOptions& opt = {}) {
    GradCheckReport report;
    report.seed = seed;
    report.tolerance = opt.tolerance;
    report.step = opt.step;
    for (LossKind kind : kAllLosses) {
        SeededRng rng(derive_seed(seed, static_cast<std::uint64_t>(kind)));
        GradCheckResult r;
        r.name = std::string(loss_name(kind));
        for (std::size_t c = 0; c < opt.configurations; ++c) {
            const LossProblem p = random_loss_problem(kind, rng);
            const double corruption = opt.corrupt == kind ? opt.corruption : 0.0;
            r.errors.push_back(gradient_error(p, opt.step, corruption));
        }
        r.max_error = *std::max_element(r.errors.begin(), r.errors.end());
        r.pass = r.max_error <= opt.tolerance;
        report.results.push_back(std::move(r));
    }
    return report;
}

}  // namespace basisloss
