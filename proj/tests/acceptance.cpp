// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.
//
// usage: basisloss_acceptance <path-to-basisloss-cli> <scratch-dir>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "basisloss/eval.hpp"
#include "basisloss/gradcheck.hpp"
#include "basisloss/losses.hpp"
#include "oracles.hpp"

namespace bl = basisloss;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("%s %-24s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------- criteria

Outcome gradient_correctness() {
    const auto t0 = Clock::now();
    const auto rep = bl::gradcheck_suite(7);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    double worst = 0;
    for (const auto& r : rep.results) worst = std::max(worst, r.max_error);
    return {rep.pass() && rep.results.size() == 6 && secs < 60.0,
            fmt("6 losses x 10 configs, worst relative error %.2e, %.2fs", worst, secs)};
}

Outcome closed_forms() {
    double worst = 0;
    auto track = [&](double got, double want) { worst = std::max(worst, std::fabs(got - want)); };

    for (std::size_t n : {2u, 4u, 50u})
        for (std::size_t m : {1u, 7u, 100u}) {
            bl::ClassifierHead h{bl::Matrix(3, n), bl::Vector(n, 0.0), true};
            bl::EmbeddingBatch b{bl::Matrix(m, 3, 1.0), std::vector<std::size_t>(m, 1)};
            track(bl::softmax_loss(b, h).value, static_cast<double>(m) * std::log(static_cast<double>(n)));
        }

    bl::ClassifierHead ortho{bl::Matrix::from_rows({{1, 0}, {0, 1}}), bl::Vector(2, 0.0), false};
    const bl::EmbeddingBatch aligned{bl::Matrix::from_rows({{1, 0}}), {0}};
    track(bl::am_softmax_loss(aligned, ortho, {5.0, 0.35}).value, std::log1p(std::exp(-3.25)));

    bl::ClassifierHead pair{bl::Matrix::from_rows({{0.3, 0.6}, {-1, -2}}), bl::Vector(2, 0.0), false};
    track(bl::between_class_loss(pair).value, 2.0);

    bl::SeededRng rng(5);
    for (std::size_t n : {2u, 5u, 30u})
        for (std::size_t hn : {1u, 3u, 100u}) {
            bl::ClassifierHead same{bl::Matrix(4, n), bl::Vector(n, 0.0), false};
            bl::Vector col(4);
            for (double& v : col) v = rng.normal();
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t k = 0; k < 4; ++k) same.basis(k, j) = col[k];
            const std::size_t m = 9;
            bl::EmbeddingBatch b{bl::Matrix(m, 4), std::vector<std::size_t>(m)};
            for (double& v : b.embeddings.values()) v = rng.normal();
            for (auto& y : b.labels) y = rng.index(n);
            track(bl::hard_negative_loss(b, same, hn).value,
                  static_cast<double>(m * std::min(hn, n - 1)) * std::log(2.0));
        }
    return {worst <= 1e-12, fmt("max deviation %.2e over softmax, am-softmax, between-class, hard-negative", worst)};
}

Outcome center_update_oracle() {
    bl::SeededRng rng(31);
    double worst = 0, worst_fixed = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + rng.index(20), d = 1 + rng.index(16), m = 1 + rng.index(100);
        bl::CenterStore s{bl::Matrix(n, d), rng.uniform(0.01, 1.0), 0.001};
        for (double& v : s.centers.values()) v = rng.normal();
        bl::EmbeddingBatch b{bl::Matrix(m, d), std::vector<std::size_t>(m)};
        for (double& v : b.embeddings.values()) v = rng.normal();
        for (auto& y : b.labels) y = rng.index(n);
        const auto next = bl::center_update(s, b);
        for (std::size_t k = 0; k < n; ++k) {
            std::vector<std::vector<double>> members;
            for (std::size_t i = 0; i < m; ++i)
                if (b.labels[i] == k) members.emplace_back(b.embeddings.row(i).begin(), b.embeddings.row(i).end());
            const auto row = s.centers.row(k);
            const auto want = oracle::updated_center({row.begin(), row.end()}, members, s.alpha);
            for (std::size_t c = 0; c < d; ++c) worst = std::max(worst, std::fabs(next.centers(k, c) - want[c]));
        }

        // Fixed point: centers placed at their speakers' batch means do not move.
        bl::CenterStore at_mean = s;
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t count = 0;
            bl::Vector mean(d, 0.0);
            for (std::size_t i = 0; i < m; ++i)
                if (b.labels[i] == k) {
                    ++count;
                    for (std::size_t c = 0; c < d; ++c) mean[c] += b.embeddings(i, c);
                }
            if (count == 0) continue;
            for (std::size_t c = 0; c < d; ++c) at_mean.centers(k, c) = mean[c] / static_cast<double>(count);
        }
        const auto still = bl::center_update(at_mean, b);
        for (std::size_t q = 0; q < still.centers.size(); ++q)
            worst_fixed = std::max(worst_fixed, std::fabs(still.centers.values()[q] - at_mean.centers.values()[q]));
    }
    return {worst <= 1e-12 && worst_fixed <= 1e-15,
            fmt("100 batches: max oracle deviation %.2e, max fixed-point drift %.2e", worst, worst_fixed)};
}

Outcome top_h_mining() {
    bl::SeededRng rng(41);
    int mismatches = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 2 + rng.index(199), d = 1 + rng.index(8);
        bl::ClassifierHead head{bl::Matrix(d, n), bl::Vector(n, 0.0), false};
        for (double& v : head.basis.values()) v = rng.normal();
        if (t % 4 == 0)  // duplicated columns give exact ties
            for (std::size_t j = 1; j < n; j += 3)
                for (std::size_t k = 0; k < d; ++k) head.basis(k, j) = head.basis(k, j - 1);
        bl::Vector e(d);
        for (double& v : e) v = rng.normal();
        const std::size_t y = rng.index(n);
        const std::size_t h = 1 + rng.index(n);
        bl::Matrix single(1, d, e);
        const bl::Matrix cos = bl::head_cosines(head, single);
        const auto want = oracle::top_h({cos.row(0).begin(), cos.row(0).end()}, y, h);
        if (bl::top_h_bases(head, e, y, h) != want) ++mismatches;
    }
    return {mismatches == 0, fmt("1000 instances (N <= 200, H <= N), %.0f mismatches", mismatches)};
}

Outcome eer_oracle() {
    bl::SeededRng rng(51);
    int mismatches = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + rng.index(499);
        std::vector<double> scores(n);
        std::vector<bool> target(n);
        bl::TrialList trials(n);
        const bool coarse = t % 2 == 0;
        for (std::size_t i = 0; i < n; ++i) {
            target[i] = i == 0 ? true : i == 1 ? false : rng.uniform() < 0.3;
            scores[i] = coarse ? static_cast<double>(rng.index(20)) / 10.0 : rng.normal();
            if (target[i]) scores[i] += 0.7;
            trials[i] = {0, 1, target[i]};
        }
        const auto got = bl::equal_error_rate(scores, trials);
        const auto want = oracle::eer(scores, target);
        const double min_score = *std::min_element(scores.begin(), scores.end());
        const double want_t = std::isinf(want.threshold) && want.threshold < 0 ? min_score : want.threshold;
        if (got.eer != want.eer || got.threshold != want_t) ++mismatches;
    }
    const auto perfect = bl::equal_error_rate({0.9, 0.8, 0.1, 0.2}, {{0, 1, true}, {0, 1, true}, {0, 1, false}, {0, 1, false}});
    return {mismatches == 0 && perfect.eer == 0.0,
            fmt("100 score sets (2..500 scores), %.0f mismatches; separable set EER %.3f", mismatches, perfect.eer)};
}

struct PresetRun {
    int code = -1;
    double seconds = 0;
    nlohmann::json metrics;
};

class Presets {
public:
    Presets(std::string cli, fs::path root) : cli_(std::move(cli)), root_(std::move(root)) {}

    const PresetRun& get(const std::string& name, const std::string& extra = "", const std::string& tag = "") {
        const std::string key = name + (tag.empty() ? "" : "-" + tag);
        if (auto it = runs_.find(key); it != runs_.end()) return it->second;
        const fs::path dir = root_ / key;
        fs::remove_all(dir);
        const std::string cmd = cli_ + " preset " + name + " --seed 1 --out " + dir.string() + " " + extra +
                                " > " + (root_ / (key + ".out")).string() + " 2>&1";
        const auto t0 = Clock::now();
        const int status = std::system(cmd.c_str());
        PresetRun r;
        r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        if (r.code == 0) r.metrics = nlohmann::json::parse(slurp(dir / "metrics.json"));
        total_seconds_ += r.seconds;
        return runs_.emplace(key, std::move(r)).first->second;
    }

    fs::path dir(const std::string& key) const { return root_ / key; }
    double total_seconds() const { return total_seconds_; }

private:
    std::string cli_;
    fs::path root_;
    std::map<std::string, PresetRun> runs_;
    double total_seconds_ = 0;
};

Outcome impostor_reduction(Presets& p) {
    const auto& center = p.get("center");
    const auto& prop1 = p.get("proposed1");
    const auto& start = p.get("proposed2", "--steps 0", "start");
    const auto& prop2 = p.get("proposed2");
    if (center.code || prop1.code || start.code || prop2.code) return {false, "a preset run failed"};
    const double c = center.metrics["mean_centroid_cosine"];
    const double p1 = prop1.metrics["mean_centroid_cosine"];
    const double s2 = start.metrics["mean_centroid_cosine"];
    const double e2 = prop2.metrics["mean_centroid_cosine"];
    const double secs = center.seconds + prop1.seconds + start.seconds + prop2.seconds;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "centroid cosine: proposed1 %.4f vs center %.4f; proposed2 start %.4f -> end %.4f; %.0fs",
                  p1, c, s2, e2, secs);
    return {p1 < c && e2 < s2 && secs <= 600.0, buf};
}

Outcome verification_quality(Presets& p) {
    std::string detail;
    bool ok = true;
    for (const char* name : {"softmax", "center", "proposed1", "proposed2", "ge2e"}) {
        const auto& r = p.get(name);
        if (r.code != 0) {
            ok = false;
            detail += std::string(name) + " failed; ";
            continue;
        }
        const double eer = r.metrics["eer"];
        const double limit = std::string(name) == "ge2e" ? 0.20 : 0.05;
        ok = ok && eer < limit;
        detail += std::string(name) + fmt(" %.4f", eer) + "; ";
    }
    return {ok, "heldout EER " + detail};
}

Outcome determinism(Presets& p) {
    const auto& a = p.get("proposed2");
    const auto& b = p.get("proposed2", "", "repeat");
    if (a.code || b.code) return {false, "a preset run failed"};
    std::string detail;
    bool ok = true;
    for (const char* f : {"checkpoint.bin", "scores.txt", "metrics.json", "train_log.jsonl", "dataset.txt"}) {
        const std::string x = slurp(p.dir("proposed2") / f), y = slurp(p.dir("proposed2-repeat") / f);
        const bool same = !x.empty() && x == y;
        ok = ok && same;
        detail += std::string(f) + (same ? " identical, " : " DIFFERS, ");
    }
    return {ok, detail};
}

Outcome bvector_scorer() {
    for (std::size_t d : {1u, 2u, 7u, 64u, 512u, 1024u}) {
        bl::Vector a(d, 0.5), b(d, -1.0);
        if (bl::bvector_features(a, b).size() != 3 * d) return {false, fmt("dim %.0f broke the 3d contract", d)};
    }
    bl::SyntheticDatasetSpec spec;
    spec.n_speakers = 40;
    spec.utterances_per_speaker = 20;
    spec.feature_dim = 16;
    spec.seed = 3;
    const bl::Dataset ds = bl::generate(spec);
    const auto scorer = bl::train_bvector_scorer(ds.features, ds.labels, ds.indices(bl::Split::Train), {});
    const auto trials = bl::make_trials(ds, bl::Split::Heldout, 6, 1.0, 9);
    std::size_t correct = 0;
    double max_asym = 0;
    for (const auto& t : trials) {
        const double s = scorer.score(ds.features.row(t.a), ds.features.row(t.b));
        max_asym = std::max(max_asym, std::fabs(s - scorer.score(ds.features.row(t.b), ds.features.row(t.a))));
        if ((s > 0) == t.target) ++correct;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(trials.size());
    return {acc > 0.95 && max_asym == 0.0,
            fmt("3d contract holds; heldout pair accuracy %.4f over %.0f pairs; order asymmetry %.1e", acc,
                static_cast<double>(trials.size()), max_asym)};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 3) {
        std::fprintf(stderr, "usage: %s <basisloss-cli> <scratch-dir>\n", argv[0]);
        return 2;
    }
    const fs::path root = argv[2];
    fs::create_directories(root);
    Presets presets(argv[1], root);

    report("gradient_correctness", gradient_correctness);
    report("closed_form_losses", closed_forms);
    report("center_update", center_update_oracle);
    report("top_h_mining", top_h_mining);
    report("equal_error_rate", eer_oracle);
    report("impostor_reduction", [&] { return impostor_reduction(presets); });
    report("verification_quality", [&] { return verification_quality(presets); });
    report("determinism", [&] { return determinism(presets); });
    report("bvector_scorer", bvector_scorer);

    std::printf("%s: %d failing criteria; preset runs took %.0fs\n", failures ? "FAILED" : "ALL PASSED", failures,
                presets.total_seconds());
    return failures == 0 ? 0 : 1;
}
