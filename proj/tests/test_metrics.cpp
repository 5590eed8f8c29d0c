#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "falldet/metrics.hpp"

using namespace falldet;
using namespace falldet::metrics;

namespace {

// Independent oracle: AUC as the probability that a random positive
// outscores a random negative, ties counting half.
double pairwise_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

struct ScoreSet {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
};

ScoreSet random_set(Rng& rng, std::size_t n, bool quantize) {
    ScoreSet s;
    for (std::size_t i = 0; i < n; ++i) {
        double v = rng.uniform(-2.0, 2.0);
        if (quantize) v = std::round(v * 4.0) / 4.0;  // force ties
        s.scores.push_back(v);
        s.labels.push_back(static_cast<std::uint8_t>(rng.uniform01() < 0.4));
    }
    // ensure both classes
    s.labels[0] = 0;
    s.labels[n - 1] = 1;
    return s;
}

}  // namespace

TEST_CASE("auc matches hand-computed example") {
    std::vector<double> scores = {0.1, 0.4, 0.35, 0.8};
    std::vector<std::uint8_t> labels = {0, 0, 1, 1};
    auto rep = roc_auc(scores, labels);
    REQUIRE(rep.n_pos == 2);
    REQUIRE(rep.n_neg == 2);
    REQUIRE(rep.auc == Catch::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("auc equals pairwise win probability on random sets") {
    Rng rng(20011);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t n = 2 + rng.below(63);
        auto s = random_set(rng, n, trial % 2 == 0);
        auto rep = roc_auc(s.scores, s.labels);
        double oracle = pairwise_auc(s.scores, s.labels);
        REQUIRE(std::abs(rep.auc - oracle) < 1e-9);
    }
}

TEST_CASE("roc endpoints and sentinel thresholds") {
    std::vector<double> scores = {0.2, 0.9, 0.9, 0.1};
    std::vector<std::uint8_t> labels = {0, 1, 0, 1};
    auto rep = roc_auc(scores, labels);
    REQUIRE(rep.roc.front().fpr == 0.0);
    REQUIRE(rep.roc.front().tpr == 0.0);
    REQUIRE(std::isinf(rep.roc.front().threshold));
    REQUIRE(rep.roc.back().fpr == 1.0);
    REQUIRE(rep.roc.back().tpr == 1.0);
    // one sweep point per distinct score
    REQUIRE(rep.roc.size() == 3 + 1);  // (0,0), s=0.9, s=0.2, s=0.1 reaches (1,1)
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
    Rng rng(404);
    for (int trial = 0; trial < 50; ++trial) {
        auto s = random_set(rng, 40, trial % 2 == 0);
        auto base = roc_auc(s.scores, s.labels).auc;
        std::vector<double> warped(s.scores.size());
        for (std::size_t i = 0; i < warped.size(); ++i)
            warped[i] = std::exp(s.scores[i]) + 3.0 * s.scores[i];
        REQUIRE(roc_auc(warped, s.labels).auc == Catch::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("label flip maps auc to 1 - auc") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        auto s = random_set(rng, 33, true);
        auto base = roc_auc(s.scores, s.labels).auc;
        auto flipped = s.labels;
        for (auto& y : flipped) y = static_cast<std::uint8_t>(1 - y);
        REQUIRE(roc_auc(s.scores, flipped).auc == Catch::Approx(1.0 - base).margin(1e-12));
    }
}

TEST_CASE("all-ties score set gives auc one half") {
    std::vector<double> scores(10, 0.5);
    std::vector<std::uint8_t> labels = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
    REQUIRE(roc_auc(scores, labels).auc == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("confusion counts match hand example") {
    // tp=3 fn=1 tn=5 fp=1 -> sens 0.75, spec 0.8333...
    std::vector<double> scores = {0.9, 0.8, 0.7, 0.2, 0.1, 0.15, 0.05, 0.3, 0.6, 0.25};
    std::vector<std::uint8_t> labels = {1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
    auto c = confusion_at(scores, labels, 0.5);
    REQUIRE(c.tp == 3);
    REQUIRE(c.fn == 1);
    REQUIRE(c.tn == 5);
    REQUIRE(c.fp == 1);
    REQUIRE(c.sensitivity() == Catch::Approx(0.75));
    REQUIRE(c.specificity() == Catch::Approx(5.0 / 6.0));
}

TEST_CASE("prediction rule is score >= threshold") {
    std::vector<double> scores = {0.5, 0.4999999};
    std::vector<std::uint8_t> labels = {1, 0};
    auto c = confusion_at(scores, labels, 0.5);
    REQUIRE(c.tp == 1);
    REQUIRE(c.tn == 1);
}

TEST_CASE("degenerate inputs are rejected") {
    REQUIRE_THROWS_AS(roc_auc({}, {}), EmptyInput);
    REQUIRE_THROWS_AS(roc_auc({0.1, 0.2}, {1, 1}), SingleClass);
    REQUIRE_THROWS_AS(confusion_at({0.1, 0.2}, {0, 0}, 0.5), SingleClass);
    REQUIRE_THROWS_AS(roc_auc({0.1}, {1, 0}), ShapeMismatch);
}

TEST_CASE("youden threshold picks the best separation point") {
    // perfect separation at 0.5: any threshold in (0.4, 0.6]; sweep
    // points are distinct scores, so 0.6 is selected
    std::vector<double> scores = {0.9, 0.6, 0.4, 0.1};
    std::vector<std::uint8_t> labels = {1, 1, 0, 0};
    double t = youden_threshold(scores, labels);
    REQUIRE(t == Catch::Approx(0.6));
    auto c = confusion_at(scores, labels, t);
    REQUIRE(c.sensitivity() == 1.0);
    REQUIRE(c.specificity() == 1.0);
}

TEST_CASE("best epoch is the earliest maximum of validation auc") {
    std::vector<EpochStats> h;
    double aucs[] = {0.5, 0.9, 0.7, 0.9, 0.8};
    for (std::size_t i = 0; i < 5; ++i) {
        EpochStats e;
        e.epoch = i + 1;
        e.val_auc = aucs[i];
        h.push_back(e);
    }
    REQUIRE(select_best_epoch(h).epoch == 2);
    REQUIRE_THROWS_AS(select_best_epoch({}), EmptyInput);
}
