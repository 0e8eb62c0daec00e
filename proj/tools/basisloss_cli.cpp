// basisloss command-line driver: dataset generation, training, evaluation,
// gradient checks, impostor histograms and preset runs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "basisloss/checkpoint.hpp"
#include "basisloss/config.hpp"
#include "basisloss/data.hpp"
#include "basisloss/eval.hpp"
#include "basisloss/gradcheck.hpp"
#include "basisloss/io.hpp"
#include "basisloss/pipeline.hpp"
#include "basisloss/training.hpp"

namespace bl = basisloss;
namespace fs = std::filesystem;

namespace {

constexpr int kExitData = 1;
constexpr int kExitUsage = 2;

void apply_overrides(bl::RunConfig& cfg, const std::vector<std::string>& assignments) {
    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos) throw bl::ConfigError(a, "expected section.key=value");
        bl::set_config_value(cfg, a.substr(0, eq), a.substr(eq + 1));
    }
}

bl::RunConfig config_for_checkpoint(const std::string& config_path, const bl::LoadedCheckpoint& ckpt) {
    if (!config_path.empty()) return bl::load_config(config_path);
    return bl::config_from_text(ckpt.provenance);
}

struct GenDataArgs {
    std::string out;
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> speakers, utterances, dim;
    std::optional<double> spread, noise;
    bool disjoint = false;
};

int run_gen_data(const GenDataArgs& a) {
    bl::RunConfig cfg = a.config.empty() ? bl::RunConfig{} : bl::load_config(a.config);
    auto& spec = cfg.dataset;
    if (a.seed) spec.seed = *a.seed;
    if (a.speakers) spec.n_speakers = *a.speakers;
    if (a.utterances) spec.utterances_per_speaker = *a.utterances;
    if (a.dim) spec.feature_dim = *a.dim;
    if (a.spread) spec.speaker_spread = *a.spread;
    if (a.noise) spec.utterance_noise = *a.noise;
    if (a.disjoint) spec.disjoint_eval_speakers = true;
    const bl::Dataset ds = bl::generate(spec);
    bl::save_dataset(a.out, ds, bl::provenance_lines(cfg));
    std::cout << "wrote " << ds.size() << " utterances of " << ds.num_speakers() << " speakers to " << a.out << '\n';
    return 0;
}

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    std::vector<std::string> set;
};

int run_train(const TrainArgs& a) {
    bl::RunConfig cfg = bl::load_config(a.config);
    apply_overrides(cfg, a.set);
    bl::validate_config(cfg);
    const bl::Dataset ds = a.data.empty() ? bl::generate(cfg.dataset) : bl::load_dataset(a.data);
    const bl::RunPaths paths{a.out};
    try {
        const bl::ModelState m = bl::train_to_dir(cfg, ds, paths);
        std::cout << "trained " << m.step << " steps; checkpoint " << paths.checkpoint().string() << '\n';
    } catch (const bl::NonFiniteLoss& e) {
        std::cerr << "error: " << e.what() << "; last good state written to " << paths.last_good().string()
                  << '\n';
        return kExitData;
    }
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string trials;
    std::string config;
    std::string out;
    std::string backend;
    bool normalize = false;
};

int run_eval(const EvalArgs& a) {
    const bl::LoadedCheckpoint ckpt = bl::load_checkpoint(a.checkpoint);
    bl::RunConfig cfg = config_for_checkpoint(a.config, ckpt);
    if (!a.backend.empty()) bl::set_config_value(cfg, "eval.backend", a.backend);
    if (a.normalize) cfg.eval.normalize = true;
    const bl::Dataset ds = bl::load_dataset(a.data);
    std::optional<bl::TrialList> trials;
    if (!a.trials.empty()) {
        std::ifstream is(a.trials);
        if (!is) throw bl::FormatError("cannot open " + a.trials);
        trials = bl::read_trials(is);
        for (const auto& t : *trials)
            if (t.a >= ds.size() || t.b >= ds.size())
                throw bl::FormatError("trial references row outside the dataset");
    }
    const bl::EvalOutcome ev = bl::evaluate_model(cfg, ckpt.model, ds, trials);
    const bl::RunPaths paths{a.out};
    bl::write_eval_outputs(cfg, ev, ckpt.model.step, paths);
    std::printf("eer %.6f threshold %.6f trials %zu alignment_mean %.4f\n", ev.eer.eer, ev.eer.threshold,
                ev.trials.size(), ev.alignment.mean);
    return 0;
}

int run_gradcheck(std::uint64_t seed, const std::string& out, std::size_t configs) {
    bl::GradCheckOptions opt;
    opt.configurations = configs;
    const bl::GradCheckReport report = bl::gradcheck_suite(seed, opt);
    const std::string text = report.to_text();
    std::cout << text;
    if (!out.empty()) bl::write_text_file(out, text);
    return report.pass() ? 0 : kExitData;
}

struct HistogramArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::string source = "centroids";
    std::size_t bins = 0;
};

int run_histogram(const HistogramArgs& a) {
    const bl::LoadedCheckpoint ckpt = bl::load_checkpoint(a.checkpoint);
    const bl::RunConfig cfg = bl::config_from_text(ckpt.provenance);
    const std::size_t bins = a.bins > 0 ? a.bins : cfg.eval.histogram_bins;
    bl::Matrix vectors;
    if (a.source == "bases") {
        vectors = ckpt.model.head.basis.transposed();
    } else {
        if (a.data.empty()) throw bl::ConfigError("--data", "centroid histograms need the dataset");
        const bl::Dataset ds = bl::load_dataset(a.data);
        const bl::Matrix emb = bl::embed_all(ckpt.model.encoder, ds);
        vectors = bl::speaker_means(emb, ds.labels, ds.indices(bl::Split::Train), ckpt.model.head.num_classes());
    }
    const bl::Histogram h = bl::impostor_histogram(vectors, bins);
    auto os = bl::open_output(a.out);
    bl::write_histogram(os, h, bl::provenance_comment(cfg) + "# source " + a.source + "\n");
    std::printf("pairs %zu mean_cosine %.6f\n", h.total(), h.mean);
    return 0;
}

struct PresetArgs {
    std::string name;
    std::uint64_t seed = 1;
    std::string out;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> hard_negatives;
    std::vector<std::string> set;
};

int run_preset(const PresetArgs& a) {
    bl::RunConfig cfg = bl::preset_config(a.name, a.seed);
    if (a.steps) cfg.steps = *a.steps;
    if (a.hard_negatives) cfg.loss.hard_negatives = *a.hard_negatives;
    apply_overrides(cfg, a.set);
    const fs::path dir = a.out.empty() ? fs::path("runs") / (a.name + "-seed" + std::to_string(a.seed)) : fs::path(a.out);
    const bl::ExperimentResult r = bl::run_experiment(cfg, dir);
    std::printf("%s: eer %.6f alignment_mean %.4f mean_centroid_cosine %.4f mean_basis_cosine %.4f -> %s\n",
                a.name.c_str(), r.eval.eer.eer, r.eval.alignment.mean, r.eval.mean_centroid_cosine,
                r.eval.mean_basis_cosine, dir.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"basisloss: speaker-basis metric-learning loss laboratory"};
    app.require_subcommand(1, 1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic speaker dataset");
    gen_cmd->add_option("--out", gen.out, "Dataset file to write")->required();
    gen_cmd->add_option("--config", gen.config, "Run config whose [dataset] section is the base");
    gen_cmd->add_option("--seed", gen.seed, "Dataset seed");
    gen_cmd->add_option("--speakers", gen.speakers, "Number of speakers");
    gen_cmd->add_option("--utterances", gen.utterances, "Utterances per speaker");
    gen_cmd->add_option("--dim", gen.dim, "Feature dimension");
    gen_cmd->add_option("--spread", gen.spread, "Inter-speaker standard deviation");
    gen_cmd->add_option("--noise", gen.noise, "Within-speaker standard deviation");
    gen_cmd->add_flag("--disjoint-eval-speakers", gen.disjoint, "Hold out whole speakers for evaluation");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
    train_cmd->add_option("--config", tr.config, "Run config file")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--data", tr.data, "Dataset file (generated from the config when omitted)")
        ->check(CLI::ExistingFile);
    train_cmd->add_option("--out", tr.out, "Output directory")->required();
    train_cmd->add_option("--set", tr.set, "Override a config value, section.key=value");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Score verification trials with a trained model");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", ev.data, "Dataset file")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--trials", ev.trials, "Trial file (built from the heldout split when omitted)")
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--config", ev.config, "Run config (defaults to the one stored in the checkpoint)")
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", ev.out, "Output directory")->required();
    eval_cmd->add_option("--backend", ev.backend, "Scoring back-end")->check(CLI::IsMember({"cosine", "bvector"}));
    eval_cmd->add_flag("--normalize", ev.normalize, "L2-normalize embeddings before scoring");

    std::uint64_t gc_seed = 7;
    std::string gc_out;
    std::size_t gc_configs = 10;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic and finite-difference loss gradients");
    gc_cmd->add_option("--seed", gc_seed, "Seed for the random configurations");
    gc_cmd->add_option("--out", gc_out, "Also write the report to this file");
    gc_cmd->add_option("--configs", gc_configs, "Random configurations per loss")->check(CLI::PositiveNumber);

    HistogramArgs hi;
    auto* hist_cmd = app.add_subcommand("histogram", "Histogram of impostor cosines between speakers");
    hist_cmd->add_option("--checkpoint", hi.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    hist_cmd->add_option("--data", hi.data, "Dataset file (needed for centroids)")->check(CLI::ExistingFile);
    hist_cmd->add_option("--out", hi.out, "Histogram file to write")->required();
    hist_cmd->add_option("--source", hi.source, "Vectors to compare")->check(CLI::IsMember({"centroids", "bases"}));
    hist_cmd->add_option("--bins", hi.bins, "Number of bins on [-1, 1]");

    PresetArgs pr;
    auto* preset_cmd = app.add_subcommand("preset", "Run one named loss configuration end to end");
    preset_cmd->add_option("name", pr.name, "softmax | center | amsoftmax | ge2e | proposed1 | proposed2")
        ->required()
        ->check(CLI::IsMember({"softmax", "center", "amsoftmax", "ge2e", "proposed1", "proposed2"}));
    preset_cmd->add_option("--seed", pr.seed, "Seed for data, batching and initialization");
    preset_cmd->add_option("--out", pr.out, "Output directory (default runs/<name>-seed<seed>)");
    preset_cmd->add_option("--steps", pr.steps, "Override the number of training steps");
    preset_cmd->add_option("--hard-negatives", pr.hard_negatives, "Override H for the hard-negative loss");
    preset_cmd->add_option("--set", pr.set, "Override a config value, section.key=value");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen_cmd) return run_gen_data(gen);
        if (*train_cmd) return run_train(tr);
        if (*eval_cmd) return run_eval(ev);
        if (*gc_cmd) return run_gradcheck(gc_seed, gc_out, gc_configs);
        if (*hist_cmd) return run_histogram(hi);
        if (*preset_cmd) return run_preset(pr);
    } catch (const bl::ConfigError& e) {
        std::cerr << "error: config field " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
