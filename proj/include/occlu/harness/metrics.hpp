#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace occlu::harness {

struct MetricsReport {
    std::string model;
    std::string mask_kind = "none";
    double ratio = 0.0;
    std::size_t fold = 0;
    std::vector<double> f1;
    std::vector<std::size_t> tp, fp, fn;
    double average = 0.0;
};

/// Per-AU F1 of thresholded probabilities. F1 is 0 when precision + recall is 0.
inline MetricsReport f1_scores(const std::vector<std::vector<double>>& probs, const std::vector<std::vector<int>>& labels,
                               double threshold = 0.5) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("f1_scores: threshold must lie in (0, 1)");
    if (probs.size() != labels.size()) throw std::invalid_argument("f1_scores: sample count mismatch");
    if (probs.empty()) throw std::invalid_argument("f1_scores: no samples");
    const std::size_t n = probs.front().size();
    MetricsReport r;
    r.tp.assign(n, 0);
    r.fp.assign(n, 0);
    r.fn.assign(n, 0);
    for (std::size_t s = 0; s < probs.size(); ++s) {
        if (probs[s].size() != n || labels[s].size() != n) throw std::invalid_argument("f1_scores: AU count mismatch");
        for (std::size_t i = 0; i < n; ++i) {
            const bool pred = probs[s][i] >= threshold, truth = labels[s][i] != 0;
            if (pred && truth) ++r.tp[i];
            if (pred && !truth) ++r.fp[i];
            if (!pred && truth) ++r.fn[i];
        }
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double tp = static_cast<double>(r.tp[i]);
        const double p = r.tp[i] + r.fp[i] ? tp / static_cast<double>(r.tp[i] + r.fp[i]) : 0.0;
        const double rc = r.tp[i] + r.fn[i] ? tp / static_cast<double>(r.tp[i] + r.fn[i]) : 0.0;
        r.f1.push_back(p + rc > 0.0 ? 2.0 * p * rc / (p + rc) : 0.0);
        sum += r.f1.back();
    }
    r.average = sum / static_cast<double>(n);
    return r;
}

}  // namespace occlu::harness
