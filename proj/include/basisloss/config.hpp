#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "basisloss/data.hpp"
#include "basisloss/losses.hpp"
#include "basisloss/optimizer.hpp"

namespace basisloss {

struct ModelSettings {
    std::vector<std::size_t> hidden_dims{64};
    std::size_t embedding_dim = 64;
    double leaky_slope = 0.01;
    bool use_bias = true;
    bool activate_embedding = false;  // linear code layer by default
};

struct LossSettings {
    LossComposite composite{{{LossKind::Softmax, 1.0}}};
    double center_lambda = 0.001;
    double center_alpha = 0.5;
    double am_scale = 5.0;
    double am_margin = 0.35;
    std::size_t hard_negatives = 100;
    double ge2e_w_init = 10.0;
    double ge2e_b_init = -5.0;
};

struct EvalSettings {
    bool normalize = false;
    std::size_t per_speaker_targets = 20;
    double impostor_ratio = 4.0;
    std::string backend = "cosine";
    std::size_t histogram_bins = 40;
    std::size_t bvector_steps = 1500;
    std::size_t bvector_width_factor = 4;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::size_t steps = 2000;
    std::size_t eval_interval = 0;
    bool log_timing = false;
    SyntheticDatasetSpec dataset;
    BatchPlan batch;
    ModelSettings model;
    LossSettings loss;
    OptimizerSettings optimizer;
    EvalSettings eval;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline double field_double(const std::string& field, const std::string& text) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v))
        throw ConfigError(field, "expected a finite number, got '" + text + "'");
    return v;
}

inline std::uint64_t field_uint(const std::string& field, const std::string& text) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw ConfigError(field, "expected a non-negative integer, got '" + text + "'");
    return v;
}

inline bool field_bool(const std::string& field, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError(field, "expected true or false, got '" + text + "'");
}

inline std::string join_dims(const std::vector<std::size_t>& dims) {
    std::string out;
    for (std::size_t i = 0; i < dims.size(); ++i) out += (i ? "," : "") + std::to_string(dims[i]);
    return out;
}

inline std::vector<std::size_t> split_dims(const std::string& field, const std::string& text) {
    std::vector<std::size_t> dims;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        dims.push_back(field_uint(field, item));
    }
    return dims;
}

inline std::string terms_text(const LossComposite& c) {
    std::string out;
    for (std::size_t i = 0; i < c.terms.size(); ++i)
        out += (i ? ", " : "") + std::string(loss_name(c.terms[i].kind)) + ":" + shortest_text(c.terms[i].weight);
    return out;
}

inline LossComposite parse_terms(const std::string& field, const std::string& text) {
    LossComposite c;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        const auto colon = item.find(':');
        const std::string name = trim(item.substr(0, colon));
        const auto kind = parse_loss_name(name);
        if (!kind) throw ConfigError(field, "unknown loss '" + name + "'");
        const double w = colon == std::string::npos ? 1.0 : field_double(field, trim(item.substr(colon + 1)));
        c.terms.push_back({*kind, w});
    }
    if (c.terms.empty()) throw ConfigError(field, "no loss terms given");
    return c;
}

struct ConfigField {
    std::string section;
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;

    std::string name() const { return section + "." + key; }
};

/// Every serialized field, in file order, bound to `cfg`.
inline std::vector<ConfigField> config_fields(RunConfig& cfg) {
    std::vector<ConfigField> f;
    auto add = [&](std::string section, std::string key, std::function<std::string()> get,
                   std::function<void(const std::string&)> set) {
        f.push_back({std::move(section), std::move(key), std::move(get), std::move(set)});
    };
    auto add_uint = [&](std::string section, std::string key, auto& ref) {
        const std::string name = section + "." + key;
        add(section, key, [&ref] { return std::to_string(ref); },
            [&ref, name](const std::string& v) { ref = static_cast<std::remove_reference_t<decltype(ref)>>(field_uint(name, v)); });
    };
    auto add_double = [&](std::string section, std::string key, double& ref) {
        const std::string name = section + "." + key;
        add(section, key, [&ref] { return shortest_text(ref); },
            [&ref, name](const std::string& v) { ref = field_double(name, v); });
    };
    auto add_bool = [&](std::string section, std::string key, bool& ref) {
        const std::string name = section + "." + key;
        add(section, key, [&ref] { return std::string(ref ? "true" : "false"); },
            [&ref, name](const std::string& v) { ref = field_bool(name, v); });
    };

    add_uint("run", "seed", cfg.seed);
    add_uint("run", "steps", cfg.steps);
    add_uint("run", "eval_interval", cfg.eval_interval);
    add_bool("run", "log_timing", cfg.log_timing);

    add_uint("dataset", "n_speakers", cfg.dataset.n_speakers);
    add_uint("dataset", "utterances_per_speaker", cfg.dataset.utterances_per_speaker);
    add_uint("dataset", "feature_dim", cfg.dataset.feature_dim);
    add_double("dataset", "speaker_spread", cfg.dataset.speaker_spread);
    add_double("dataset", "utterance_noise", cfg.dataset.utterance_noise);
    add_uint("dataset", "seed", cfg.dataset.seed);
    add_bool("dataset", "disjoint_eval_speakers", cfg.dataset.disjoint_eval_speakers);

    add("batch", "mode", [&cfg] { return std::string(batch_mode_name(cfg.batch.mode)); },
        [&cfg](const std::string& v) {
            if (v == "random") cfg.batch.mode = BatchMode::Random;
            else if (v == "grouped") cfg.batch.mode = BatchMode::SpeakerGrouped;
            else throw ConfigError("batch.mode", "expected random or grouped, got '" + v + "'");
        });
    add_uint("batch", "batch_size", cfg.batch.batch_size);
    add_uint("batch", "utterances_per_speaker", cfg.batch.utterances_per_speaker);
    add_uint("batch", "seed", cfg.batch.seed);

    add("model", "hidden_dims", [&cfg] { return join_dims(cfg.model.hidden_dims); },
        [&cfg](const std::string& v) { cfg.model.hidden_dims = split_dims("model.hidden_dims", v); });
    add_uint("model", "embedding_dim", cfg.model.embedding_dim);
    add_double("model", "leaky_slope", cfg.model.leaky_slope);
    add_bool("model", "use_bias", cfg.model.use_bias);
    add_bool("model", "activate_embedding", cfg.model.activate_embedding);

    add("loss", "terms", [&cfg] { return terms_text(cfg.loss.composite); },
        [&cfg](const std::string& v) { cfg.loss.composite = parse_terms("loss.terms", v); });
    add_double("loss", "center_lambda", cfg.loss.center_lambda);
    add_double("loss", "center_alpha", cfg.loss.center_alpha);
    add_double("loss", "am_scale", cfg.loss.am_scale);
    add_double("loss", "am_margin", cfg.loss.am_margin);
    add_uint("loss", "hard_negatives", cfg.loss.hard_negatives);
    add_double("loss", "ge2e_w_init", cfg.loss.ge2e_w_init);
    add_double("loss", "ge2e_b_init", cfg.loss.ge2e_b_init);

    add("optimizer", "kind", [&cfg] { return std::string(optimizer_name(cfg.optimizer.kind)); },
        [&cfg](const std::string& v) {
            if (v == "adam") cfg.optimizer.kind = OptimizerKind::Adam;
            else if (v == "sgd") cfg.optimizer.kind = OptimizerKind::Sgd;
            else throw ConfigError("optimizer.kind", "expected adam or sgd, got '" + v + "'");
        });
    add_double("optimizer", "learning_rate", cfg.optimizer.learning_rate);
    add_double("optimizer", "beta1", cfg.optimizer.beta1);
    add_double("optimizer", "beta2", cfg.optimizer.beta2);
    add_double("optimizer", "epsilon", cfg.optimizer.epsilon);
    add_double("optimizer", "weight_decay", cfg.optimizer.weight_decay);
    add("optimizer", "decay_mode", [&cfg] { return std::string(decay_mode_name(cfg.optimizer.decay_mode)); },
        [&cfg](const std::string& v) {
            if (v == "decoupled") cfg.optimizer.decay_mode = DecayMode::Decoupled;
            else if (v == "coupled") cfg.optimizer.decay_mode = DecayMode::Coupled;
            else throw ConfigError("optimizer.decay_mode", "expected decoupled or coupled, got '" + v + "'");
        });

    add_bool("eval", "normalize", cfg.eval.normalize);
    add_uint("eval", "per_speaker_targets", cfg.eval.per_speaker_targets);
    add_double("eval", "impostor_ratio", cfg.eval.impostor_ratio);
    add("eval", "backend", [&cfg] { return cfg.eval.backend; },
        [&cfg](const std::string& v) {
            if (v != "cosine" && v != "bvector")
                throw ConfigError("eval.backend", "expected cosine or bvector, got '" + v + "'");
            cfg.eval.backend = v;
        });
    add_uint("eval", "histogram_bins", cfg.eval.histogram_bins);
    add_uint("eval", "bvector_steps", cfg.eval.bvector_steps);
    add_uint("eval", "bvector_width_factor", cfg.eval.bvector_width_factor);
    return f;
}

}  // namespace detail

inline constexpr std::string_view kConfigMagic = "# basisloss run config v1";

/// Flat "key = value" text grouped under [section] headers.
inline std::string config_to_text(const RunConfig& cfg) {
    RunConfig copy = cfg;
    std::string out(kConfigMagic);
    out += '\n';
    std::string section;
    for (const auto& field : detail::config_fields(copy)) {
        if (field.section != section) {
            section = field.section;
            out += "[" + section + "]\n";
        }
        out += field.key + " = " + field.get() + "\n";
    }
    return out;
}

/// Applies one `section.key=value` assignment.
inline void set_config_value(RunConfig& cfg, const std::string& name, const std::string& value) {
    for (auto& field : detail::config_fields(cfg)) {
        if (field.name() == name) {
            field.set(detail::trim(value));
            return;
        }
    }
    throw ConfigError(name, "unknown configuration key");
}

/// Parses config text on top of the defaults; unknown keys are rejected.
inline RunConfig config_from_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("line " + std::to_string(line_no), "malformed section header");
            section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no), "expected key = value");
        if (section.empty())
            throw ConfigError(detail::trim(t.substr(0, eq)), "key appears before any [section]");
        set_config_value(cfg, section + "." + detail::trim(t.substr(0, eq)), t.substr(eq + 1));
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path, "cannot open config file");
    std::stringstream ss;
    ss << is.rdbuf();
    return config_from_text(ss.str());
}

/// Cross-field consistency checks. Throws ConfigError naming the field.
inline void validate_config(const RunConfig& cfg) {
    try {
        cfg.dataset.validate();
    } catch (const InvalidSpec& e) {
        throw ConfigError("dataset", e.what());
    }
    try {
        cfg.batch.validate();
    } catch (const InvalidPlan& e) {
        throw ConfigError("batch", e.what());
    }
    cfg.loss.composite.validate();
    const auto& comp = cfg.loss.composite;
    if (comp.contains(LossKind::Ge2e) && cfg.batch.mode != BatchMode::SpeakerGrouped)
        throw ConfigInconsistency("batch.mode",
                                  "the ge2e loss needs speaker-grouped batches (batch.mode = grouped) "
                                  "so every speaker in a batch has several utterances");
    if (cfg.model.embedding_dim == 0) throw ConfigError("model.embedding_dim", "must be positive");
    for (std::size_t d : cfg.model.hidden_dims)
        if (d == 0) throw ConfigError("model.hidden_dims", "layer widths must be positive");
    if (!(cfg.loss.center_alpha > 0.0 && cfg.loss.center_alpha <= 1.0))
        throw ConfigError("loss.center_alpha", "must lie in (0, 1]");
    if (!(cfg.loss.center_lambda >= 0.0)) throw ConfigError("loss.center_lambda", "must be non-negative");
    if (!(cfg.loss.am_scale > 0.0)) throw ConfigError("loss.am_scale", "must be positive");
    if (!(cfg.loss.am_margin >= 0.0 && cfg.loss.am_margin < 1.0))
        throw ConfigError("loss.am_margin", "must lie in [0, 1)");
    if (cfg.loss.hard_negatives == 0) throw ConfigError("loss.hard_negatives", "must be at least 1");
    if (!(cfg.loss.ge2e_w_init > 0.0)) throw ConfigError("loss.ge2e_w_init", "must be positive");
    if (!(cfg.optimizer.learning_rate >= 0.0))
        throw ConfigError("optimizer.learning_rate", "must be non-negative");
    if (!(cfg.optimizer.weight_decay >= 0.0))
        throw ConfigError("optimizer.weight_decay", "must be non-negative");
    if (!(cfg.optimizer.beta1 >= 0.0 && cfg.optimizer.beta1 < 1.0))
        throw ConfigError("optimizer.beta1", "must lie in [0, 1)");
    if (!(cfg.optimizer.beta2 >= 0.0 && cfg.optimizer.beta2 < 1.0))
        throw ConfigError("optimizer.beta2", "must lie in [0, 1)");
    if (!(cfg.optimizer.epsilon > 0.0)) throw ConfigError("optimizer.epsilon", "must be positive");
    if (cfg.eval.histogram_bins < 2) throw ConfigError("eval.histogram_bins", "must be at least 2");
    if (!(cfg.eval.impostor_ratio > 0.0)) throw ConfigError("eval.impostor_ratio", "must be positive");
    if (cfg.eval.per_speaker_targets == 0)
        throw ConfigError("eval.per_speaker_targets", "must be at least 1");
}

}  // namespace basisloss
