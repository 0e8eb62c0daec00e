#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "basisloss/config.hpp"
#include "basisloss/data.hpp"
#include "basisloss/eval.hpp"
#include "basisloss/training.hpp"

namespace basisloss {

/// Config text as "# "-prefixed comment lines, for text artifacts.
inline std::string provenance_comment(const RunConfig& cfg) {
    std::string out;
    std::istringstream is(config_to_text(cfg));
    std::string line;
    while (std::getline(is, line)) out += "# " + line + "\n";
    return out;
}

inline std::vector<std::string> provenance_lines(const RunConfig& cfg) {
    std::vector<std::string> lines;
    std::istringstream is(config_to_text(cfg));
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    return lines;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    return os;
}

inline std::string_view trial_label(bool target) { return target ? "target" : "impostor"; }

/// "index_a index_b label" per line; '#' lines are comments.
inline void write_trials(std::ostream& os, const TrialList& trials, std::string_view header = {}) {
    os << header;
    for (const auto& t : trials) os << t.a << ' ' << t.b << ' ' << trial_label(t.target) << '\n';
}

inline TrialList read_trials(std::istream& is) {
    TrialList trials;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        Trial t;
        std::string label;
        if (!(fields >> t.a >> t.b >> label))
            throw FormatError("trial line " + std::to_string(line_no) + " is not 'index_a index_b label'");
        if (label == "target") t.target = true;
        else if (label == "impostor") t.target = false;
        else throw FormatError("trial line " + std::to_string(line_no) + " has unknown label '" + label + "'");
        trials.push_back(t);
    }
    return trials;
}

/// "index_a index_b label score" per line.
inline void write_scores(std::ostream& os, const TrialList& trials, const ScoreSet& scores,
                         std::string_view header = {}) {
    if (trials.size() != scores.size()) throw ShapeMismatch("scores do not align with trials");
    os << header;
    for (std::size_t i = 0; i < trials.size(); ++i)
        os << trials[i].a << ' ' << trials[i].b << ' ' << trial_label(trials[i].target) << ' '
           << format_double(scores[i]) << '\n';
}

/// "bin_left bin_right count" rows.
inline void write_histogram(std::ostream& os, const Histogram& h, std::string_view header = {}) {
    os << header;
    for (std::size_t b = 0; b < h.counts.size(); ++b)
        os << format_double(h.edges[b]) << ' ' << format_double(h.edges[b + 1]) << ' ' << h.counts[b] << '\n';
}

/// One JSON object per line: a config record, then step and eval records.
class MetricLog {
public:
    MetricLog(std::ostream& os, const RunConfig& cfg) : os_(os), timing_(cfg.log_timing) {
        nlohmann::ordered_json head;
        head["type"] = "config";
        head["seed"] = cfg.seed;
        head["config"] = config_to_text(cfg);
        os_ << head.dump() << '\n';
    }

    void step(const StepRecord& r) {
        nlohmann::ordered_json j;
        j["type"] = "step";
        j["step"] = r.step;
        for (const auto& [kind, value] : r.losses) j["losses"][std::string(loss_name(kind))] = value;
        j["total"] = r.total;
        j["grad_norm"] = {{"embeddings", r.grad_norm_embeddings},
                          {"encoder", r.grad_norm_encoder},
                          {"basis", r.grad_norm_basis}};
        if (timing_) j["wall_seconds"] = r.wall_seconds;
        os_ << j.dump() << '\n';
    }

    void eval(const EvalRecord& r) {
        nlohmann::ordered_json j;
        j["type"] = "eval";
        j["step"] = r.step;
        j["heldout_eer"] = r.heldout_eer;
        j["mean_basis_cosine"] = r.mean_basis_cosine;
        os_ << j.dump() << '\n';
    }

private:
    std::ostream& os_;
    bool timing_;
};

}  // namespace basisloss
