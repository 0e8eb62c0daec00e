#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "basisloss/checkpoint.hpp"
#include "basisloss/config.hpp"
#include "basisloss/data.hpp"
#include "basisloss/eval.hpp"
#include "basisloss/losses.hpp"
#include "basisloss/model.hpp"
#include "basisloss/optimizer.hpp"

namespace basisloss {

struct StepRecord {
    std::size_t step = 0;
    std::vector<std::pair<LossKind, double>> losses;
    double total = 0.0;
    double grad_norm_embeddings = 0.0;
    double grad_norm_encoder = 0.0;
    double grad_norm_basis = 0.0;
    double wall_seconds = 0.0;
};

/// Periodic diagnostics taken every `run.eval_interval` steps.
struct EvalRecord {
    std::size_t step = 0;
    double heldout_eer = 0.0;
    double mean_basis_cosine = 0.0;
};

/// Fresh parameters for a run with `num_classes` training speakers.
inline ModelState init_model(const RunConfig& cfg, std::size_t num_classes) {
    SeededRng rng(derive_seed(cfg.seed, 0x1417));
    std::vector<std::size_t> dims{cfg.dataset.feature_dim};
    dims.insert(dims.end(), cfg.model.hidden_dims.begin(), cfg.model.hidden_dims.end());
    dims.push_back(cfg.model.embedding_dim);
    ModelState m;
    m.encoder = make_encoder(dims, cfg.model.leaky_slope, rng, cfg.model.activate_embedding);
    m.head = make_head(cfg.model.embedding_dim, num_classes, cfg.model.use_bias, rng);
    m.centers = CenterStore{Matrix(num_classes, cfg.model.embedding_dim), cfg.loss.center_alpha,
                            cfg.loss.center_lambda};
    m.ge2e = Ge2eParams{cfg.loss.ge2e_w_init, cfg.loss.ge2e_b_init};
    m.seed = cfg.seed;
    m.step = 0;
    return m;
}

/// Embeddings of every dataset row, indexed by row.
inline Matrix embed_all(const MlpEncoder& enc, const Dataset& ds) {
    return encoder_forward(enc, ds.features).first;
}

/// Mean ordered-pair cosine between basis columns.
inline double mean_basis_cosine(const ClassifierHead& head) {
    return mean_pair_cosine(head.basis.transposed());
}

/// The optimization loop. State is mutated only by step(); if a step throws,
/// the state is the one left by the previous successful step.
class Trainer {
public:
    Trainer(RunConfig cfg, const Dataset& ds) : cfg_(std::move(cfg)), ds_(ds), opt_(cfg_.optimizer) {
        validate_config(cfg_);
        const std::size_t n_classes = ds_.num_train_speakers();
        if (n_classes < 2) throw ConfigError("dataset", "training split has fewer than two speakers");
        if (ds_.features.cols() != cfg_.dataset.feature_dim)
            throw ConfigError("dataset.feature_dim", "dataset has " + std::to_string(ds_.features.cols()) +
                                                         " features per row, config says " +
                                                         std::to_string(cfg_.dataset.feature_dim));
        state_ = init_model(cfg_, n_classes);
    }

    const RunConfig& config() const noexcept { return cfg_; }
    const ModelState& state() const noexcept { return state_; }
    std::size_t steps_done() const noexcept { return state_.step; }

    StepRecord step() {
        const auto started = std::chrono::steady_clock::now();
        const std::size_t step_index = state_.step;
        const FeatureBatch fb = next_batch(cfg_.batch, ds_, step_index);
        auto [embeddings, trace] = encoder_forward(state_.encoder, fb.features);
        EmbeddingBatch batch{std::move(embeddings), fb.labels};

        LossInputs inputs;
        inputs.batch = &batch;
        inputs.head = &state_.head;
        inputs.centers = &state_.centers;
        inputs.am = AmSoftmaxParams{cfg_.loss.am_scale, cfg_.loss.am_margin};
        inputs.ge2e = state_.ge2e;
        inputs.hard_negatives = cfg_.loss.hard_negatives;

        CompositeOutput out;
        try {
            out = compose(cfg_.loss.composite, inputs);
        } catch (const DegenerateVector& e) {
            throw DegenerateVector("step " + std::to_string(step_index) + ": " + e.what() +
                                   " while a cosine loss is active; training aborted");
        }
        if (!std::isfinite(out.total.value) || !all_finite(out.total.grad_embeddings.values()) ||
            (out.total.grad_basis && !all_finite(out.total.grad_basis->values())))
            throw NonFiniteLoss(step_index, "non-finite loss at step " + std::to_string(step_index));

        StepRecord rec;
        rec.step = step_index;
        rec.losses = out.components;
        rec.total = out.total.value;
        rec.grad_norm_embeddings = norm(out.total.grad_embeddings.values());

        const ParameterGradients enc_grads = encoder_backward(state_.encoder, trace, out.total.grad_embeddings);
        double enc_sq = 0.0;
        for (const auto& g : enc_grads.weights) enc_sq += dot(g.values(), g.values());
        for (const auto& g : enc_grads.biases) enc_sq += dot(g, g);
        rec.grad_norm_encoder = std::sqrt(enc_sq);

        const Matrix zero_basis(state_.head.basis.rows(), state_.head.basis.cols());
        const Vector zero_bias(state_.head.bias.size(), 0.0);
        const Matrix& g_basis = out.total.grad_basis ? *out.total.grad_basis : zero_basis;
        const Vector& g_bias = out.total.grad_bias ? *out.total.grad_bias : zero_bias;
        rec.grad_norm_basis = norm(g_basis.values());
        const ScoreGrad g_score = out.total.grad_score.value_or(ScoreGrad{});
        const double g_w = g_score.w_score;
        const double g_b = g_score.b_score;

        std::vector<ParamSlot> slots;
        for (std::size_t l = 0; l < state_.encoder.depth(); ++l) {
            slots.push_back({state_.encoder.weights[l].values(), enc_grads.weights[l].values(), true});
            slots.push_back({state_.encoder.biases[l], enc_grads.biases[l], false});
        }
        slots.push_back({state_.head.basis.values(), g_basis.values(), true});
        slots.push_back({state_.head.bias, g_bias, false});
        slots.push_back({std::span<double>(&state_.ge2e.w_score, 1), std::span<const double>(&g_w, 1), false});
        slots.push_back({std::span<double>(&state_.ge2e.b_score, 1), std::span<const double>(&g_b, 1), false});
        optimizer_step(opt_, slots);
        state_.ge2e.w_score = std::max(state_.ge2e.w_score, Ge2eParams::kMinWeight);

        if (cfg_.loss.composite.contains(LossKind::Center))
            state_.centers = center_update(state_.centers, batch);

        ++state_.step;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        return rec;
    }

    EvalRecord evaluate() const {
        EvalRecord rec;
        rec.step = state_.step;
        const Matrix emb = embed_all(state_.encoder, ds_);
        const auto split = ds_.indices(Split::Heldout).empty() ? Split::Train : Split::Heldout;
        const TrialList trials = make_trials(ds_, split, cfg_.eval.per_speaker_targets,
                                             cfg_.eval.impostor_ratio, derive_seed(cfg_.seed, 0x7e57));
        rec.heldout_eer = equal_error_rate(cosine_scores(emb, trials, cfg_.eval.normalize), trials).eer;
        rec.mean_basis_cosine = mean_basis_cosine(state_.head);
        return rec;
    }

private:
    RunConfig cfg_;
    const Dataset& ds_;
    OptimizerState opt_;
    ModelState state_;
};

struct TrainResult {
    ModelState model;
    std::vector<StepRecord> log;
    std::vector<EvalRecord> evals;
};

struct TrainCallbacks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const EvalRecord&)> on_eval;
};

/// Runs cfg.steps steps. NonFiniteLoss and DegenerateVector propagate; use a
/// Trainer directly to keep the last good state after an abort.
inline TrainResult train(const RunConfig& cfg, const Dataset& ds, const TrainCallbacks& cb = {}) {
    Trainer trainer(cfg, ds);
    TrainResult result;
    result.log.reserve(cfg.steps);
    for (std::size_t s = 0; s < cfg.steps; ++s) {
        result.log.push_back(trainer.step());
        if (cb.on_step) cb.on_step(result.log.back());
        if (cfg.eval_interval > 0 && trainer.steps_done() % cfg.eval_interval == 0) {
            result.evals.push_back(trainer.evaluate());
            if (cb.on_eval) cb.on_eval(result.evals.back());
        }
    }
    result.model = trainer.state();
    return result;
}

}  // namespace basisloss
