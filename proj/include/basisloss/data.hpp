#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "basisloss/numeric.hpp"

namespace basisloss {

struct SyntheticDatasetSpec {
    std::size_t n_speakers = 50;
    std::size_t utterances_per_speaker = 40;
    std::size_t feature_dim = 32;
    double speaker_spread = 1.0;
    double utterance_noise = 0.3;
    std::uint64_t seed = 1;
    bool disjoint_eval_speakers = false;

    void validate() const {
        if (n_speakers < 2) throw InvalidSpec("dataset.n_speakers must be at least 2");
        if (utterances_per_speaker < 1)
            throw InvalidSpec("dataset.utterances_per_speaker must be at least 1");
        if (feature_dim < 1) throw InvalidSpec("dataset.feature_dim must be at least 1");
        if (!(speaker_spread > 0.0) || !std::isfinite(speaker_spread))
            throw InvalidSpec("dataset.speaker_spread must be positive");
        if (!(utterance_noise >= 0.0) || !std::isfinite(utterance_noise))
            throw InvalidSpec("dataset.utterance_noise must be non-negative");
        if (disjoint_eval_speakers && n_speakers < 3)
            throw InvalidSpec("dataset.disjoint_eval_speakers needs at least 3 speakers");
    }
};

enum class Split { Train, Heldout };

inline std::string_view split_name(Split s) { return s == Split::Train ? "train" : "heldout"; }

struct Dataset {
    SyntheticDatasetSpec spec;
    Matrix features;  // [(n_speakers * utterances) x feature_dim]
    std::vector<std::size_t> labels;
    std::vector<Split> splits;

    std::size_t size() const noexcept { return labels.size(); }

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < splits.size(); ++i)
            if (splits[i] == s) out.push_back(i);
        return out;
    }

    /// Number of speakers with training utterances; those occupy labels
    /// [0, num_train_speakers()).
    std::size_t num_train_speakers() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (splits[i] == Split::Train) n = std::max(n, labels[i] + 1);
        return n;
    }

    std::size_t num_speakers() const {
        std::size_t n = 0;
        for (std::size_t y : labels) n = std::max(n, y + 1);
        return n;
    }

    Matrix rows(std::span<const std::size_t> idx) const {
        Matrix out(idx.size(), features.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto src = features.row(idx[r]);
            std::copy(src.begin(), src.end(), out.row(r).begin());
        }
        return out;
    }
};

/// Heldout utterances per speaker under the per-speaker 80/20 split.
inline std::size_t heldout_count(std::size_t utterances) {
    if (utterances < 2) return 0;
    const auto n = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(utterances)));
    return std::clamp<std::size_t>(n, 1, utterances - 1);
}

/// Speaker means ~ N(0, spread^2 I); utterances = mean + N(0, noise^2 I).
inline Dataset generate(const SyntheticDatasetSpec& spec) {
    spec.validate();
    SeededRng rng(spec.seed);
    const std::size_t d = spec.feature_dim;
    const std::size_t u = spec.utterances_per_speaker;
    Matrix means(spec.n_speakers, d);
    for (double& v : means.values()) v = spec.speaker_spread * rng.normal();

    Dataset ds;
    ds.spec = spec;
    ds.features = Matrix(spec.n_speakers * u, d);
    ds.labels.resize(spec.n_speakers * u);
    ds.splits.resize(spec.n_speakers * u, Split::Train);

    std::size_t heldout_speakers = 0;
    if (spec.disjoint_eval_speakers) {
        const auto n = static_cast<std::size_t>(
            std::llround(0.2 * static_cast<double>(spec.n_speakers)));
        heldout_speakers = std::clamp<std::size_t>(n, 1, spec.n_speakers - 2);
    }
    const std::size_t first_heldout_speaker = spec.n_speakers - heldout_speakers;
    const std::size_t per_speaker_heldout = heldout_count(u);

    for (std::size_t k = 0; k < spec.n_speakers; ++k) {
        for (std::size_t t = 0; t < u; ++t) {
            const std::size_t r = k * u + t;
            ds.labels[r] = k;
            auto row = ds.features.row(r);
            const auto mean = means.row(k);
            for (std::size_t c = 0; c < d; ++c) row[c] = mean[c] + spec.utterance_noise * rng.normal();
            const bool held = spec.disjoint_eval_speakers ? k >= first_heldout_speaker
                                                          : t >= u - per_speaker_heldout;
            ds.splits[r] = held ? Split::Heldout : Split::Train;
        }
    }
    return ds;
}

enum class BatchMode { Random, SpeakerGrouped };

inline std::string_view batch_mode_name(BatchMode m) {
    return m == BatchMode::Random ? "random" : "grouped";
}

struct BatchPlan {
    BatchMode mode = BatchMode::Random;
    std::size_t batch_size = 100;
    std::size_t utterances_per_speaker = 5;  // grouped mode only
    std::uint64_t seed = 1;

    void validate() const {
        if (batch_size == 0) throw InvalidPlan("batch.batch_size must be positive");
        if (mode == BatchMode::SpeakerGrouped) {
            if (utterances_per_speaker == 0)
                throw InvalidPlan("batch.utterances_per_speaker must be positive");
            if (batch_size % utterances_per_speaker != 0)
                throw InvalidPlan("batch.batch_size must be divisible by batch.utterances_per_speaker");
            if (batch_size / utterances_per_speaker < 2)
                throw InvalidPlan("grouped batches need at least two speakers");
        }
    }
};

struct FeatureBatch {
    Matrix features;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> rows;  // dataset row of each entry
};

/// Training batch `step`; a pure function of (plan, dataset, step).
inline FeatureBatch next_batch(const BatchPlan& plan, const Dataset& ds, std::size_t step) {
    plan.validate();
    SeededRng rng(derive_seed(plan.seed, step));
    const auto train = ds.indices(Split::Train);
    FeatureBatch batch;
    if (plan.mode == BatchMode::Random) {
        if (train.size() < plan.batch_size)
            throw InvalidPlan("batch.batch_size " + std::to_string(plan.batch_size) +
                              " exceeds the " + std::to_string(train.size()) +
                              " training utterances");
        batch.rows = rng.sample(train, plan.batch_size);
    } else {
        const std::size_t per = plan.utterances_per_speaker;
        const std::size_t n_speakers = plan.batch_size / per;
        std::map<std::size_t, std::vector<std::size_t>> by_speaker;
        for (std::size_t r : train) by_speaker[ds.labels[r]].push_back(r);
        std::vector<std::size_t> eligible;
        for (const auto& [speaker, rows] : by_speaker)
            if (rows.size() >= per) eligible.push_back(speaker);
        if (eligible.size() < n_speakers)
            throw InvalidPlan("grouped batch needs " + std::to_string(n_speakers) +
                              " speakers with at least " + std::to_string(per) +
                              " training utterances, dataset has " + std::to_string(eligible.size()));
        for (std::size_t speaker : rng.sample(eligible, n_speakers))
            for (std::size_t r : rng.sample(by_speaker[speaker], per)) batch.rows.push_back(r);
    }
    batch.features = ds.rows(batch.rows);
    for (std::size_t r : batch.rows) batch.labels.push_back(ds.labels[r]);
    return batch;
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(std::string_view text, const std::string& what) {
    std::string s(text);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size())
        throw FormatError("cannot parse " + what + " from '" + s + "'");
    return v;
}

inline std::uint64_t parse_uint(std::string_view text, const std::string& what) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw FormatError("cannot parse " + what + " from '" + std::string(text) + "'");
    return v;
}

inline constexpr std::string_view kDatasetMagic = "# basisloss dataset v1";

/// Text export: magic line, a `# key=value ...` header, then one row per
/// utterance "label,split,f_1,...,f_d" at 17 significant digits.
inline void write_dataset(std::ostream& os, const Dataset& ds,
                          const std::vector<std::string>& provenance = {}) {
    const auto& s = ds.spec;
    os << kDatasetMagic << '\n';
    os << "# n_speakers=" << s.n_speakers << " utterances_per_speaker=" << s.utterances_per_speaker
       << " feature_dim=" << s.feature_dim << " rows=" << ds.size()
       << " speaker_spread=" << format_double(s.speaker_spread)
       << " utterance_noise=" << format_double(s.utterance_noise) << " seed=" << s.seed
       << " disjoint_eval_speakers=" << (s.disjoint_eval_speakers ? 1 : 0) << '\n';
    for (const auto& line : provenance) os << "## " << line << '\n';
    for (std::size_t r = 0; r < ds.size(); ++r) {
        os << ds.labels[r] << ',' << split_name(ds.splits[r]);
        for (double v : ds.features.row(r)) os << ',' << format_double(v);
        os << '\n';
    }
}

inline Dataset read_dataset(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kDatasetMagic)
        throw FormatError("dataset file does not start with '" + std::string(kDatasetMagic) + "'");
    if (!std::getline(is, line) || line.rfind("# ", 0) != 0)
        throw FormatError("dataset header line missing");
    std::map<std::string, std::string> header;
    {
        std::istringstream fields(line.substr(2));
        std::string kv;
        while (fields >> kv) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw FormatError("malformed header field '" + kv + "'");
            header[kv.substr(0, eq)] = kv.substr(eq + 1);
        }
    }
    auto field = [&](const std::string& key) -> const std::string& {
        auto it = header.find(key);
        if (it == header.end()) throw FormatError("dataset header lacks " + key);
        return it->second;
    };
    Dataset ds;
    ds.spec.n_speakers = parse_uint(field("n_speakers"), "n_speakers");
    ds.spec.utterances_per_speaker = parse_uint(field("utterances_per_speaker"), "utterances_per_speaker");
    ds.spec.feature_dim = parse_uint(field("feature_dim"), "feature_dim");
    ds.spec.speaker_spread = parse_double(field("speaker_spread"), "speaker_spread");
    ds.spec.utterance_noise = parse_double(field("utterance_noise"), "utterance_noise");
    ds.spec.seed = parse_uint(field("seed"), "seed");
    ds.spec.disjoint_eval_speakers = parse_uint(field("disjoint_eval_speakers"), "disjoint_eval_speakers") != 0;
    const std::size_t rows = parse_uint(field("rows"), "rows");
    const std::size_t d = ds.spec.feature_dim;

    std::vector<double> values;
    values.reserve(rows * d);
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string_view> cells;
        std::string_view rest(line);
        for (;;) {
            const auto comma = rest.find(',');
            cells.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (cells.size() != d + 2)
            throw FormatError("dataset row " + std::to_string(ds.labels.size()) + " has " +
                              std::to_string(cells.size()) + " cells, expected " + std::to_string(d + 2));
        ds.labels.push_back(parse_uint(cells[0], "label"));
        if (cells[1] == "train")
            ds.splits.push_back(Split::Train);
        else if (cells[1] == "heldout")
            ds.splits.push_back(Split::Heldout);
        else
            throw FormatError("unknown split '" + std::string(cells[1]) + "'");
        for (std::size_t c = 0; c < d; ++c) values.push_back(parse_double(cells[c + 2], "feature"));
    }
    if (ds.labels.size() != rows)
        throw FormatError("dataset header promises " + std::to_string(rows) + " rows, found " +
                          std::to_string(ds.labels.size()));
    ds.features = Matrix(rows, d, std::move(values));
    return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds,
                         const std::vector<std::string>& provenance = {}) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    write_dataset(os, ds, provenance);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path);
    return read_dataset(is);
}

}  // namespace basisloss
