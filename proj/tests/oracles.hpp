#pragma once

// Independent brute-force reference implementations used by the tests.
// They share no code with the library beyond plain containers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

struct Eer {
    double eer;
    double threshold;
};

/// Tries every threshold in {-inf} ∪ scores ∪ {+inf}, counting errors from
/// scratch each time. Accept iff score >= t.
inline Eer eer(const std::vector<double>& scores, const std::vector<bool>& target) {
    std::vector<double> ts{-std::numeric_limits<double>::infinity()};
    ts.insert(ts.end(), scores.begin(), scores.end());
    ts.push_back(std::numeric_limits<double>::infinity());
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

    Eer best{0.0, 0.0};
    double best_gap = std::numeric_limits<double>::infinity();
    for (double t : ts) {
        double fr = 0, fa = 0, nt = 0, ni = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (target[i]) {
                nt += 1;
                if (scores[i] < t) fr += 1;
            } else {
                ni += 1;
                if (scores[i] >= t) fa += 1;
            }
        }
        const double frr = fr / nt, far = fa / ni;
        if (std::fabs(far - frr) < best_gap) {
            best_gap = std::fabs(far - frr);
            best = {(far + frr) / 2.0, t};
        }
    }
    return best;
}

/// Full stable sort of every non-target index by descending cosine.
inline std::vector<std::size_t> top_h(const std::vector<double>& cos, std::size_t target, std::size_t h) {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < cos.size(); ++j)
        if (j != target) idx.push_back(j);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return cos[a] > cos[b]; });
    idx.resize(std::min(h, idx.size()));
    return idx;
}

/// Center update, one speaker at a time: c - alpha * sum(c - e) / (1 + n).
inline std::vector<double> updated_center(const std::vector<double>& c,
                                          const std::vector<std::vector<double>>& members, double alpha) {
    if (members.empty()) return c;
    std::vector<double> out = c;
    for (std::size_t t = 0; t < c.size(); ++t) {
        double s = 0.0;
        for (const auto& e : members) s += c[t] - e[t];
        out[t] = c[t] - alpha * s / (1.0 + static_cast<double>(members.size()));
    }
    return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

}  // namespace oracle
