#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "falldet/common.hpp"

namespace falldet::metrics {

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double threshold = 0.0;

    double sensitivity() const { return static_cast<double>(tp) / (tp + fn); }
    double specificity() const { return static_cast<double>(tn) / (tn + fp); }
};

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

struct EvalReport {
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    std::vector<RocPoint> roc;
    double auc = 0.0;
    Confusion at_threshold;
};

inline void check_scores(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size()) throw ShapeMismatch("scores/labels length mismatch");
    if (scores.empty()) throw EmptyInput("no scores");
}

// Classifies score >= threshold as fall.
inline Confusion confusion_at(const std::vector<double>& scores,
                              const std::vector<std::uint8_t>& labels, double threshold) {
    check_scores(scores, labels);
    Confusion c;
    c.threshold = threshold;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        bool pred = scores[i] >= threshold;
        if (labels[i]) {
            pred ? ++c.tp : ++c.fn;
        } else {
            pred ? ++c.fp : ++c.tn;
        }
    }
    if (c.tp + c.fn == 0 || c.tn + c.fp == 0)
        throw SingleClass("confusion rates need both classes");
    return c;
}

// Threshold sweep over the distinct scores plus +/-inf sentinels,
// curve from (0,0) to (1,1), area by the trapezoidal rule. Tied
// scores collapse into one sweep point, which is what makes the
// trapezoid equal the pairwise win probability with half credit for
// ties.
inline EvalReport roc_auc(const std::vector<double>& scores,
                          const std::vector<std::uint8_t>& labels) {
    check_scores(scores, labels);
    EvalReport rep;
    for (auto y : labels) y ? ++rep.n_pos : ++rep.n_neg;
    if (rep.n_pos == 0 || rep.n_neg == 0) throw SingleClass("roc needs both classes");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });

    const double inf = std::numeric_limits<double>::infinity();
    rep.roc.push_back({inf, 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    double auc = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        double s = scores[order[i]];
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == s) {
            labels[order[j]] ? ++tp : ++fp;
            ++j;
        }
        double prev_fpr = rep.roc.back().fpr;
        double prev_tpr = rep.roc.back().tpr;
        double fpr = static_cast<double>(fp) / rep.n_neg;
        double tpr = static_cast<double>(tp) / rep.n_pos;
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        rep.roc.push_back({s, fpr, tpr});
        i = j;
    }
    if (rep.roc.back().fpr != 1.0 || rep.roc.back().tpr != 1.0)
        rep.roc.push_back({-inf, 1.0, 1.0});
    rep.auc = auc;
    return rep;
}

// Threshold maximizing Youden's J = sensitivity + specificity - 1,
// evaluated at every distinct score. Earliest (highest) threshold
// wins ties so the choice is deterministic.
inline double youden_threshold(const std::vector<double>& scores,
                               const std::vector<std::uint8_t>& labels) {
    EvalReport rep = roc_auc(scores, labels);
    double best_j = -1.0;
    double best_t = rep.roc.front().threshold;
    for (const auto& p : rep.roc) {
        if (!std::isfinite(p.threshold)) continue;
        double j = p.tpr - p.fpr;
        if (j > best_j) {
            best_j = j;
            best_t = p.threshold;
        }
    }
    return best_t;
}

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_auc = 0.0;
    double val_auc = 0.0;
    double val_sensitivity = 0.0;
    double val_specificity = 0.0;
    double loss = 0.0;
    double lr = 0.0;
};

// Earliest epoch achieving the maximum validation AUC.
inline const EpochStats& select_best_epoch(const std::vector<EpochStats>& history) {
    if (history.empty()) throw EmptyInput("empty training history");
    std::size_t best = 0;
    for (std::size_t i = 1; i < history.size(); ++i)
        if (history[i].val_auc > history[best].val_auc) best = i;
    return history[best];
}

}  // namespace falldet::metrics
