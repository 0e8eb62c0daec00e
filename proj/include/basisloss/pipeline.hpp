#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"

#include "basisloss/checkpoint.hpp"
#include "basisloss/config.hpp"
#include "basisloss/data.hpp"
#include "basisloss/eval.hpp"
#include "basisloss/io.hpp"
#include "basisloss/training.hpp"

namespace basisloss {

inline constexpr std::array<std::string_view, 6> kPresetNames{"softmax",   "center",    "amsoftmax",
                                                              "ge2e",      "proposed1", "proposed2"};

/// Loss combinations and hyper-parameters of the compared systems, at toy
/// scale. Every seed in the config is set to `seed`.
inline RunConfig preset_config(std::string_view name, std::uint64_t seed) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.dataset.seed = seed;
    cfg.batch.seed = seed;
    auto& loss = cfg.loss;
    if (name == "softmax") {
        loss.composite = {{{LossKind::Softmax, 1.0}}};
    } else if (name == "center") {
        loss.composite = {{{LossKind::Softmax, 1.0}, {LossKind::Center, 1.0}}};
    } else if (name == "amsoftmax") {
        loss.composite = {{{LossKind::AmSoftmax, 1.0}}};
        cfg.model.use_bias = false;
        cfg.optimizer.weight_decay = 1e-4;
    } else if (name == "ge2e") {
        loss.composite = {{{LossKind::Ge2e, 1.0}}};
        cfg.model.use_bias = false;
        cfg.batch.mode = BatchMode::SpeakerGrouped;
        cfg.batch.utterances_per_speaker = 5;
        cfg.optimizer.weight_decay = 1e-4;
    } else if (name == "proposed1") {
        loss.composite = {{{LossKind::Softmax, 1.0}, {LossKind::Center, 1.0}, {LossKind::BetweenClass, 1.0}}};
    } else if (name == "proposed2") {
        loss.composite = {{{LossKind::HardNegative, 1.0}, {LossKind::BetweenClass, 1.0}}};
        cfg.model.use_bias = false;
        loss.hard_negatives = 100;
        cfg.optimizer.weight_decay = 1e-4;
    } else {
        throw ConfigError("preset", "unknown preset '" + std::string(name) +
                                        "' (expected softmax, center, amsoftmax, ge2e, proposed1 or proposed2)");
    }
    return cfg;
}

struct EvalOutcome {
    std::string backend;
    TrialList trials;
    ScoreSet scores;
    EerResult eer;
    AlignmentReport alignment;
    Histogram histogram;  // over training-speaker centroids
    double mean_centroid_cosine = 0.0;
    double mean_basis_cosine = 0.0;
};

/// Split used for trials: heldout when the dataset has one.
inline Split trial_split(const Dataset& ds) {
    return ds.indices(Split::Heldout).empty() ? Split::Train : Split::Heldout;
}

inline EvalOutcome evaluate_model(const RunConfig& cfg, const ModelState& model, const Dataset& ds,
                                  std::optional<TrialList> trials = std::nullopt) {
    EvalOutcome out;
    const Matrix emb = embed_all(model.encoder, ds);
    out.trials = trials ? std::move(*trials)
                        : make_trials(ds, trial_split(ds), cfg.eval.per_speaker_targets,
                                      cfg.eval.impostor_ratio, derive_seed(cfg.seed, 0x7e57));
    validate_trials(out.trials);
    out.backend = cfg.eval.backend;
    if (cfg.eval.backend == "bvector") {
        BVectorSettings bs;
        bs.width_factor = cfg.eval.bvector_width_factor;
        bs.steps = cfg.eval.bvector_steps;
        bs.seed = derive_seed(cfg.seed, 0xb5);
        Matrix train_emb = cfg.eval.normalize ? l2_normalized(emb) : emb;
        const BVectorScorer scorer = train_bvector_scorer(train_emb, ds.labels, ds.indices(Split::Train), bs);
        out.scores = bvector_scores(scorer, emb, out.trials, cfg.eval.normalize);
    } else {
        out.scores = cosine_scores(emb, out.trials, cfg.eval.normalize);
    }
    out.eer = equal_error_rate(out.scores, out.trials);

    const Matrix centroids =
        speaker_means(emb, ds.labels, ds.indices(Split::Train), model.head.num_classes());
    out.alignment = basis_alignment_report(model.head, centroids);
    out.histogram = impostor_histogram(centroids, cfg.eval.histogram_bins);
    out.mean_centroid_cosine = out.histogram.mean;
    out.mean_basis_cosine = mean_basis_cosine(model.head);
    return out;
}

inline nlohmann::ordered_json metrics_json(const RunConfig& cfg, const EvalOutcome& ev, std::uint64_t steps) {
    std::size_t targets = 0;
    for (const auto& t : ev.trials) targets += t.target ? 1 : 0;
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["steps"] = steps;
    j["backend"] = ev.backend;
    j["eer"] = ev.eer.eer;
    j["threshold"] = ev.eer.threshold;
    j["trials"] = {{"target", targets}, {"impostor", ev.trials.size() - targets}};
    j["alignment"] = {{"mean", ev.alignment.mean}, {"min", ev.alignment.min}};
    j["mean_centroid_cosine"] = ev.mean_centroid_cosine;
    j["mean_basis_cosine"] = ev.mean_basis_cosine;
    j["config"] = config_to_text(cfg);
    return j;
}

/// Files written by a full run, relative to its output directory.
struct RunPaths {
    std::filesystem::path dir;

    std::filesystem::path config() const { return dir / "config.txt"; }
    std::filesystem::path dataset() const { return dir / "dataset.txt"; }
    std::filesystem::path checkpoint() const { return dir / "checkpoint.bin"; }
    std::filesystem::path last_good() const { return dir / "checkpoint.last_good.bin"; }
    std::filesystem::path log() const { return dir / "train_log.jsonl"; }
    std::filesystem::path trials() const { return dir / "trials.txt"; }
    std::filesystem::path scores() const { return dir / "scores.txt"; }
    std::filesystem::path metrics() const { return dir / "metrics.json"; }
    std::filesystem::path histogram() const { return dir / "histogram.txt"; }
};

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    auto os = open_output(path.string());
    os << text;
}

/// Trains with `cfg` on `ds`, writing the checkpoint and metric log. On a
/// non-finite loss the last good state is written before rethrowing.
inline ModelState train_to_dir(const RunConfig& cfg, const Dataset& ds, const RunPaths& paths) {
    std::filesystem::create_directories(paths.dir);
    write_text_file(paths.config(), config_to_text(cfg));
    auto log_stream = open_output(paths.log().string());
    MetricLog log(log_stream, cfg);
    Trainer trainer(cfg, ds);
    const std::string provenance = config_to_text(cfg);
    try {
        for (std::size_t s = 0; s < cfg.steps; ++s) {
            log.step(trainer.step());
            if (cfg.eval_interval > 0 && trainer.steps_done() % cfg.eval_interval == 0)
                log.eval(trainer.evaluate());
        }
    } catch (const NonFiniteLoss&) {
        save_checkpoint(paths.last_good().string(), trainer.state(), provenance);
        throw;
    }
    save_checkpoint(paths.checkpoint().string(), trainer.state(), provenance);
    return trainer.state();
}

inline void write_eval_outputs(const RunConfig& cfg, const EvalOutcome& ev, std::uint64_t steps,
                               const RunPaths& paths) {
    std::filesystem::create_directories(paths.dir);
    const std::string header = provenance_comment(cfg);
    {
        auto os = open_output(paths.trials().string());
        write_trials(os, ev.trials, header);
    }
    {
        auto os = open_output(paths.scores().string());
        write_scores(os, ev.trials, ev.scores, header);
    }
    {
        auto os = open_output(paths.histogram().string());
        write_histogram(os, ev.histogram, header);
    }
    write_text_file(paths.metrics(), metrics_json(cfg, ev, steps).dump(2) + "\n");
}

struct ExperimentResult {
    ModelState model;
    EvalOutcome eval;
};

/// Generate, train, evaluate and write every artifact under `dir`.
inline ExperimentResult run_experiment(const RunConfig& cfg, const std::filesystem::path& dir) {
    validate_config(cfg);
    const RunPaths paths{dir};
    std::filesystem::create_directories(dir);
    const Dataset ds = generate(cfg.dataset);
    save_dataset(paths.dataset().string(), ds, provenance_lines(cfg));
    ExperimentResult r;
    r.model = train_to_dir(cfg, ds, paths);
    r.eval = evaluate_model(cfg, r.model, ds);
    write_eval_outputs(cfg, r.eval, r.model.step, paths);
    return r;
}

}  // namespace basisloss
