#pragma once

// Baseline classifiers over flattened window samples. All models score a
// window with a real number (higher = more fall-like); training is
// single-threaded and deterministic under the spec seed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "falldet/common.hpp"
#include "falldet/metrics.hpp"
#include "falldet/preprocess.hpp"

namespace falldet::ml {

enum class ModelKind { Threshold, LinearRegression, Knn, GaussianNb, BernoulliNb, Mlp };

inline const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::Threshold: return "threshold";
        case ModelKind::LinearRegression: return "linear_regression";
        case ModelKind::Knn: return "knn";
        case ModelKind::GaussianNb: return "gaussian_nb";
        case ModelKind::BernoulliNb: return "bernoulli_nb";
        case ModelKind::Mlp: return "mlp";
    }
    throw InvariantViolation("unknown model kind");
}

inline ModelKind model_kind_from_name(const std::string& s) {
    if (s == "threshold") return ModelKind::Threshold;
    if (s == "linear_regression") return ModelKind::LinearRegression;
    if (s == "knn") return ModelKind::Knn;
    if (s == "gaussian_nb") return ModelKind::GaussianNb;
    if (s == "bernoulli_nb") return ModelKind::BernoulliNb;
    if (s == "mlp") return ModelKind::Mlp;
    throw MalformedDocument("unknown model kind: " + s);
}

struct ModelSpec {
    ModelKind kind = ModelKind::Threshold;
    std::size_t k = 3;
    std::size_t hidden_width = 500;
    std::size_t epochs = 100;
    double lr = 0.01;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    std::size_t batch = 512;
    std::uint64_t seed = 1;

    void validate() const {
        if (k < 1 || k % 2 == 0) throw ConfigError("k must be odd and >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (hidden_width < 1) throw ConfigError("hidden_width must be >= 1");
        if (batch < 1) throw ConfigError("batch must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("lr must be positive");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
    }
};

// ===== MLP core ===================================================
// input(d) -> hidden(h, ReLU) -> 1 logit. Templated so tests can run the
// exact computation in double for finite-difference checks.

template <typename T>
struct MlpParams {
    std::size_t d = 0, h = 0;
    std::vector<T> W1;  // h x d, row-major
    std::vector<T> b1;  // h
    std::vector<T> W2;  // h
    T b2 = T(0);

    bool operator==(const MlpParams&) const = default;
};

template <typename T>
inline MlpParams<T> he_init(std::size_t d, std::size_t h, std::uint64_t seed) {
    Rng rng(seed);
    MlpParams<T> p;
    p.d = d;
    p.h = h;
    double s1 = std::sqrt(2.0 / static_cast<double>(d));
    double s2 = std::sqrt(2.0 / static_cast<double>(h));
    p.W1.resize(h * d);
    for (auto& v : p.W1) v = static_cast<T>(rng.normal(0.0, s1));
    p.b1.assign(h, T(0));
    p.W2.resize(h);
    for (auto& v : p.W2) v = static_cast<T>(rng.normal(0.0, s2));
    p.b2 = T(0);
    return p;
}

// Per-sample logit with sequential double accumulation; the single code
// path shared by validation scoring and deployed scoring.
template <typename X>
inline double mlp_logit(const MlpParams<float>& p, const X* x) {
    double z = static_cast<double>(p.b2);
    for (std::size_t j = 0; j < p.h; ++j) {
        double a = static_cast<double>(p.b1[j]);
        const float* row = p.W1.data() + j * p.d;
        for (std::size_t i = 0; i < p.d; ++i)
            a += static_cast<double>(row[i]) * static_cast<double>(x[i]);
        if (a > 0.0) z += static_cast<double>(p.W2[j]) * a;
    }
    return z;
}

namespace detail {

template <typename T>
inline T stable_bce(T z, T y) {
    // max(z,0) - z*y + log(1 + exp(-|z|))
    T zpos = z > T(0) ? z : T(0);
    T az = z > T(0) ? z : -z;
    return zpos - z * y + std::log1p(std::exp(-az));
}

template <typename T>
inline T sigmoid(T z) {
    if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
    T e = std::exp(z);
    return e / (T(1) + e);
}

}  // namespace detail

// Mean stable BCE over the batch plus (weight_decay/2) * sum of squares of
// every parameter, biases included (matching SGD-style decoupled decay
// folded into the loss).
template <typename T>
inline T mlp_loss(const MlpParams<T>& p, const std::vector<std::vector<T>>& X,
                  const std::vector<std::uint8_t>& y, double weight_decay) {
    if (X.empty()) throw EmptyInput("mlp_loss: empty batch");
    T loss = T(0);
    for (std::size_t s = 0; s < X.size(); ++s) {
        T z = p.b2;
        for (std::size_t j = 0; j < p.h; ++j) {
            T a = p.b1[j];
            for (std::size_t i = 0; i < p.d; ++i) a += p.W1[j * p.d + i] * X[s][i];
            if (a > T(0)) z += p.W2[j] * a;
        }
        loss += detail::stable_bce(z, static_cast<T>(y[s]));
    }
    loss /= static_cast<T>(X.size());
    T reg = T(0);
    for (T v : p.W1) reg += v * v;
    for (T v : p.b1) reg += v * v;
    for (T v : p.W2) reg += v * v;
    reg += p.b2 * p.b2;
    return loss + static_cast<T>(weight_decay) * reg / T(2);
}

template <typename T>
inline MlpParams<T> mlp_gradient(const MlpParams<T>& p, const std::vector<std::vector<T>>& X,
                                 const std::vector<std::uint8_t>& y, double weight_decay) {
    if (X.empty()) throw EmptyInput("mlp_gradient: empty batch");
    MlpParams<T> g;
    g.d = p.d;
    g.h = p.h;
    g.W1.assign(p.W1.size(), T(0));
    g.b1.assign(p.b1.size(), T(0));
    g.W2.assign(p.W2.size(), T(0));
    g.b2 = T(0);
    const T inv_n = T(1) / static_cast<T>(X.size());
    std::vector<T> z1(p.h), a(p.h);
    for (std::size_t s = 0; s < X.size(); ++s) {
        for (std::size_t j = 0; j < p.h; ++j) {
            T v = p.b1[j];
            for (std::size_t i = 0; i < p.d; ++i) v += p.W1[j * p.d + i] * X[s][i];
            z1[j] = v;
            a[j] = v > T(0) ? v : T(0);
        }
        T z = p.b2;
        for (std::size_t j = 0; j < p.h; ++j) z += p.W2[j] * a[j];
        T gz = (detail::sigmoid(z) - static_cast<T>(y[s])) * inv_n;
        g.b2 += gz;
        for (std::size_t j = 0; j < p.h; ++j) {
            g.W2[j] += gz * a[j];
            if (z1[j] > T(0)) {
                T gj = gz * p.W2[j];
                g.b1[j] += gj;
                for (std::size_t i = 0; i < p.d; ++i) g.W1[j * p.d + i] += gj * X[s][i];
            }
        }
    }
    const T wd = static_cast<T>(weight_decay);
    for (std::size_t i = 0; i < p.W1.size(); ++i) g.W1[i] += wd * p.W1[i];
    for (std::size_t i = 0; i < p.b1.size(); ++i) g.b1[i] += wd * p.b1[i];
    for (std::size_t i = 0; i < p.W2.size(); ++i) g.W2[i] += wd * p.W2[i];
    g.b2 += wd * p.b2;
    return g;
}

// ===== trained model ==============================================

struct TrainedModel {
    ModelSpec spec;
    std::size_t w = 0;
    std::size_t d = 0;  // w * 75
    std::string scaler_id;
    std::vector<metrics::EpochStats> history;

    double tau = 0.0;                              // Threshold
    std::vector<float> beta;                       // LinearRegression weights [d]
    double intercept = 0.0;                        //   + unpenalized intercept
    std::vector<float> knn_x;                      // KNN matrix, n x d row-major
    std::vector<std::uint8_t> knn_y;               //   labels
    std::array<double, 2> prior = {0.0, 0.0};      // NB class priors
    std::array<std::vector<float>, 2> gnb_mean;    // GaussianNB per-class stats
    std::array<std::vector<float>, 2> gnb_var;
    std::array<std::vector<float>, 2> bnb_p1;      // BernoulliNB P(feature > 0 | class)
    MlpParams<float> mlp;
};

// ===== scoring ====================================================

namespace detail {

inline double window_max_magnitude(const std::vector<float>& x, std::size_t w) {
    double best = 0.0;
    for (std::size_t r = 0; r < w; ++r) {
        const float* row = x.data() + r * kFeaturesPerInterval;
        for (int j = 0; j < kAccelPerInterval; ++j) {
            double ax = row[prep::kAxOffset + j];
            double ay = row[prep::kAyOffset + j];
            double az = row[prep::kAzOffset + j];
            double m = std::sqrt(ax * ax + ay * ay + az * az);
            if (m > best) best = m;
        }
    }
    return best;
}

inline double knn_score(const TrainedModel& m, const std::vector<float>& x) {
    const std::size_t n = m.knn_y.size();
    const std::size_t k = std::min<std::size_t>(m.spec.k, n);
    // k best (distance, index) pairs; lexicographic order breaks ties by index
    std::vector<std::pair<double, std::size_t>> best;
    best.reserve(k + 1);
    // bound checks are amortised over fixed-size chunks so the summation
    // order, and therefore the scores, match the unabandoned loop exactly
    constexpr std::size_t kBoundCheckStride = 15;
    double bound = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < n; ++r) {
        const float* row = m.knn_x.data() + r * m.d;
        // the partial sum of squares only grows, so a row that clears the
        // current k-th best distance can never place; the compare is strict,
        // so equal-distance rows still reach the index tie-break
        double dist = 0.0;
        std::size_t i = 0;
        while (i < m.d) {
            std::size_t stop = std::min<std::size_t>(m.d, i + kBoundCheckStride);
            for (; i < stop; ++i) {
                double diff = static_cast<double>(x[i]) - static_cast<double>(row[i]);
                dist += diff * diff;
            }
            if (dist > bound) break;
        }
        if (dist > bound) continue;
        std::pair<double, std::size_t> cand{dist, r};
        if (best.size() < k) {
            best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
        } else if (cand < best.back()) {
            best.pop_back();
            best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
        }
        if (best.size() == k) bound = best.back().first;
    }
    std::size_t votes = 0;
    for (const auto& [dist, idx] : best) votes += m.knn_y[idx];
    return static_cast<double>(votes) / static_cast<double>(k);
}

// log joint under an independent-feature Gaussian model
inline double gnb_log_joint(const TrainedModel& m, const std::vector<float>& x, int c) {
    constexpr double kLog2Pi = 1.8378770664093454836;
    double l = std::log(m.prior[c]);
    for (std::size_t i = 0; i < m.d; ++i) {
        double var = m.gnb_var[c][i];
        double diff = static_cast<double>(x[i]) - static_cast<double>(m.gnb_mean[c][i]);
        l += -0.5 * (kLog2Pi + std::log(var)) - diff * diff / (2.0 * var);
    }
    return l;
}

inline double bnb_log_joint(const TrainedModel& m, const std::vector<float>& x, int c) {
    double l = std::log(m.prior[c]);
    for (std::size_t i = 0; i < m.d; ++i) {
        double p1 = m.bnb_p1[c][i];
        l += x[i] > 0.0f ? std::log(p1) : std::log(1.0 - p1);
    }
    return l;
}

inline double posterior_from_log_joints(double l0, double l1) {
    return 1.0 / (1.0 + std::exp(l0 - l1));
}

}  // namespace detail

inline double score_sample(const TrainedModel& m, const std::vector<float>& x) {
    if (x.size() != m.d)
        throw ShapeMismatch("window has " + std::to_string(x.size()) + " features, model wants " +
                            std::to_string(m.d));
    switch (m.spec.kind) {
        case ModelKind::Threshold:
            return detail::window_max_magnitude(x, m.w);
        case ModelKind::LinearRegression: {
            double s = m.intercept;
            for (std::size_t i = 0; i < m.d; ++i)
                s += static_cast<double>(m.beta[i]) * static_cast<double>(x[i]);
            return s;
        }
        case ModelKind::Knn:
            return detail::knn_score(m, x);
        case ModelKind::GaussianNb:
            return detail::posterior_from_log_joints(detail::gnb_log_joint(m, x, 0),
                                                     detail::gnb_log_joint(m, x, 1));
        case ModelKind::BernoulliNb:
            return detail::posterior_from_log_joints(detail::bnb_log_joint(m, x, 0),
                                                     detail::bnb_log_joint(m, x, 1));
        case ModelKind::Mlp:
            return detail::sigmoid(mlp_logit(m.mlp, x.data()));
    }
    throw InvariantViolation("unknown model kind");
}

// ===== training ===================================================

namespace detail {

inline std::vector<double> batch_scores(const TrainedModel& m,
                                        const std::vector<prep::WindowSample>& set) {
    std::vector<double> out;
    out.reserve(set.size());
    for (const auto& s : set) out.push_back(score_sample(m, s.x));
    return out;
}

inline std::vector<std::uint8_t> batch_labels(const std::vector<prep::WindowSample>& set) {
    std::vector<std::uint8_t> out;
    out.reserve(set.size());
    for (const auto& s : set) out.push_back(s.label);
    return out;
}

inline bool has_both_classes(const std::vector<prep::WindowSample>& set) {
    bool pos = false, neg = false;
    for (const auto& s : set) (s.label ? pos : neg) = true;
    return pos && neg;
}

// One summary entry: train/val AUC plus val confusion at the given
// threshold. Falls back to zeros when a split cannot support the metric.
inline metrics::EpochStats summary_entry(const TrainedModel& m,
                                         const std::vector<prep::WindowSample>& train,
                                         const std::vector<prep::WindowSample>& val,
                                         double threshold) {
    metrics::EpochStats e;
    e.epoch = 1;
    if (has_both_classes(train))
        e.train_auc = metrics::roc_auc(batch_scores(m, train), batch_labels(train)).auc;
    if (!val.empty() && has_both_classes(val)) {
        auto scores = batch_scores(m, val);
        auto labels = batch_labels(val);
        e.val_auc = metrics::roc_auc(scores, labels).auc;
        auto conf = metrics::confusion_at(scores, labels, threshold);
        e.val_sensitivity = conf.sensitivity();
        e.val_specificity = conf.specificity();
    }
    return e;
}

inline void train_threshold(TrainedModel& m, const std::vector<prep::WindowSample>& train) {
    std::vector<double> scores;
    scores.reserve(train.size());
    for (const auto& s : train) scores.push_back(window_max_magnitude(s.x, m.w));
    m.tau = metrics::youden_threshold(scores, batch_labels(train));
}

inline void train_linear_regression(TrainedModel& m,
                                    const std::vector<prep::WindowSample>& train) {
    const std::size_t n = train.size(), d = m.d;
    using MatD = Eigen::MatrixXd;
    MatD X(n, d + 1);
    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < d; ++f) X(i, f) = train[i].x[f];
        X(i, d) = 1.0;
        y(i) = train[i].label;
    }
    MatD a = X.transpose() * X;
    for (std::size_t f = 0; f < d; ++f) a(f, f) += 1e-4;  // intercept stays unpenalized
    Eigen::VectorXd beta = a.ldlt().solve(X.transpose() * y);
    m.beta.resize(d);
    for (std::size_t f = 0; f < d; ++f) m.beta[f] = static_cast<float>(beta(f));
    m.intercept = beta(d);
}

inline void train_knn(TrainedModel& m, const std::vector<prep::WindowSample>& train) {
    m.knn_x.resize(train.size() * m.d);
    m.knn_y.resize(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        std::copy(train[i].x.begin(), train[i].x.end(), m.knn_x.begin() + i * m.d);
        m.knn_y[i] = train[i].label;
    }
}

inline void train_gaussian_nb(TrainedModel& m, const std::vector<prep::WindowSample>& train) {
    const std::size_t d = m.d;
    std::array<std::vector<double>, 2> sum{std::vector<double>(d, 0.0),
                                           std::vector<double>(d, 0.0)};
    std::array<std::vector<double>, 2> sq{std::vector<double>(d, 0.0),
                                          std::vector<double>(d, 0.0)};
    std::array<std::size_t, 2> count = {0, 0};
    for (const auto& s : train) {
        int c = s.label ? 1 : 0;
        ++count[c];
        for (std::size_t f = 0; f < d; ++f) {
            sum[c][f] += s.x[f];
            sq[c][f] += static_cast<double>(s.x[f]) * static_cast<double>(s.x[f]);
        }
    }
    for (int c = 0; c < 2; ++c) {
        m.prior[c] = static_cast<double>(count[c]) / static_cast<double>(train.size());
        m.gnb_mean[c].resize(d);
        m.gnb_var[c].resize(d);
        for (std::size_t f = 0; f < d; ++f) {
            double mu = sum[c][f] / static_cast<double>(count[c]);
            double var = sq[c][f] / static_cast<double>(count[c]) - mu * mu;
            m.gnb_mean[c][f] = static_cast<float>(mu);
            m.gnb_var[c][f] = static_cast<float>(std::max(var, 1e-9));
        }
    }
}

inline void train_bernoulli_nb(TrainedModel& m, const std::vector<prep::WindowSample>& train) {
    const std::size_t d = m.d;
    std::array<std::vector<double>, 2> ones{std::vector<double>(d, 0.0),
                                            std::vector<double>(d, 0.0)};
    std::array<std::size_t, 2> count = {0, 0};
    for (const auto& s : train) {
        int c = s.label ? 1 : 0;
        ++count[c];
        for (std::size_t f = 0; f < d; ++f)
            if (s.x[f] > 0.0f) ones[c][f] += 1.0;
    }
    for (int c = 0; c < 2; ++c) {
        m.prior[c] = static_cast<double>(count[c]) / static_cast<double>(train.size());
        m.bnb_p1[c].resize(d);
        for (std::size_t f = 0; f < d; ++f)
            m.bnb_p1[c][f] =
                static_cast<float>((ones[c][f] + 1.0) / (static_cast<double>(count[c]) + 2.0));
    }
}

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecF = Eigen::VectorXf;

inline void train_mlp(TrainedModel& m, const std::vector<prep::WindowSample>& train,
                      const std::vector<prep::WindowSample>& val) {
    if (val.empty()) throw EmptyInput("mlp training needs a validation split");
    const auto& spec = m.spec;
    const std::size_t n = train.size(), d = m.d, h = spec.hidden_width;

    MatF X(n, d);
    VecF y(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < d; ++f) X(i, f) = train[i].x[f];
        y(i) = train[i].label;
    }
    auto val_labels = batch_labels(val);

    m.mlp = he_init<float>(d, h, substream(spec.seed, 1));
    Rng shuffle_rng(substream(spec.seed, 2));

    Eigen::Map<MatF> W1(m.mlp.W1.data(), h, d);
    Eigen::Map<VecF> b1(m.mlp.b1.data(), h);
    Eigen::Map<VecF> W2(m.mlp.W2.data(), h);
    MatF vW1 = MatF::Zero(h, d);
    VecF vb1 = VecF::Zero(h), vW2 = VecF::Zero(h);
    float vb2 = 0.0f;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    double lr = spec.lr;
    const float wd = static_cast<float>(spec.weight_decay);
    const float mom = static_cast<float>(spec.momentum);

    MlpParams<float> best_params = m.mlp;
    double best_val = -1.0;
    double sched_best = -1.0;
    std::size_t sched_bad = 0;

    for (std::size_t epoch = 1; epoch <= spec.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        std::vector<double> train_scores;
        std::vector<std::uint8_t> train_labels;
        train_scores.reserve(n);
        train_labels.reserve(n);
        double epoch_loss = 0.0;

        for (std::size_t start = 0; start < n; start += spec.batch) {
            const std::size_t nb = std::min(spec.batch, n - start);
            MatF Xb(nb, d);
            VecF yb(nb);
            for (std::size_t r = 0; r < nb; ++r) {
                Xb.row(r) = X.row(order[start + r]);
                yb(r) = y(order[start + r]);
            }
            MatF Z1 = (Xb * W1.transpose()).rowwise() + b1.transpose();
            MatF A = Z1.cwiseMax(0.0f);
            VecF z = ((A * W2).array() + m.mlp.b2).matrix();

            double batch_loss = 0.0;
            VecF gz(nb);
            for (std::size_t r = 0; r < nb; ++r) {
                batch_loss += detail::stable_bce(static_cast<double>(z(r)),
                                                 static_cast<double>(yb(r)));
                gz(r) = static_cast<float>(
                    (detail::sigmoid(static_cast<double>(z(r))) - yb(r)) / nb);
                train_scores.push_back(z(r));
                train_labels.push_back(static_cast<std::uint8_t>(yb(r)));
            }
            batch_loss /= nb;
            if (!std::isfinite(batch_loss))
                throw NonFiniteLoss("epoch " + std::to_string(epoch) + ": loss diverged");
            epoch_loss += batch_loss * nb;

            VecF gW2 = A.transpose() * gz + wd * W2;
            float gb2 = gz.sum() + wd * m.mlp.b2;
            MatF gZ1 = (gz * W2.transpose()).cwiseProduct((Z1.array() > 0.0f).cast<float>().matrix());
            MatF gW1 = gZ1.transpose() * Xb + wd * W1;
            VecF gb1 = gZ1.colwise().sum().transpose() + wd * b1;

            vW1 = mom * vW1 + gW1;
            vb1 = mom * vb1 + gb1;
            vW2 = mom * vW2 + gW2;
            vb2 = mom * vb2 + gb2;
            W1 -= static_cast<float>(lr) * vW1;
            b1 -= static_cast<float>(lr) * vb1;
            W2 -= static_cast<float>(lr) * vW2;
            m.mlp.b2 -= static_cast<float>(lr) * vb2;
        }
        auto finite = [](const std::vector<float>& vs) {
            for (float v : vs)
                if (!std::isfinite(v)) return false;
            return true;
        };
        if (!finite(m.mlp.W1) || !finite(m.mlp.b1) || !finite(m.mlp.W2) ||
            !std::isfinite(m.mlp.b2))
            throw NonFiniteLoss("epoch " + std::to_string(epoch) + ": parameters diverged");

        // validation through the deployed scoring kernel
        std::vector<double> val_scores;
        val_scores.reserve(val.size());
        for (const auto& s : val)
            val_scores.push_back(detail::sigmoid(mlp_logit(m.mlp, s.x.data())));

        metrics::EpochStats e;
        e.epoch = epoch;
        e.loss = epoch_loss / n;
        e.lr = lr;
        e.train_auc = metrics::roc_auc(train_scores, train_labels).auc;
        e.val_auc = metrics::roc_auc(val_scores, val_labels).auc;
        auto conf = metrics::confusion_at(val_scores, val_labels, 0.5);
        e.val_sensitivity = conf.sensitivity();
        e.val_specificity = conf.specificity();
        m.history.push_back(e);

        if (e.val_auc > best_val) {
            best_val = e.val_auc;
            best_params = m.mlp;
        }
        // plateau scheduler monitoring validation AUC
        if (e.val_auc > sched_best + 1e-8) {
            sched_best = e.val_auc;
            sched_bad = 0;
        } else if (++sched_bad > 5) {
            lr *= 0.1;
            sched_bad = 0;
        }
    }
    m.mlp = best_params;  // deploy the epoch with the highest validation AUC
}

}  // namespace detail

inline TrainedModel train_model(const ModelSpec& spec,
                                const std::vector<prep::WindowSample>& train,
                                const std::vector<prep::WindowSample>& val) {
    spec.validate();
    if (train.empty()) throw EmptyInput("train_model: empty training set");
    const std::size_t d = train[0].x.size();
    if (d == 0 || d % kFeaturesPerInterval != 0)
        throw ShapeMismatch("window length " + std::to_string(d) + " is not a multiple of " +
                            std::to_string(kFeaturesPerInterval));
    for (const auto& s : train)
        if (s.x.size() != d) throw ShapeMismatch("inconsistent training window shapes");
    for (const auto& s : val)
        if (s.x.size() != d) throw ShapeMismatch("validation window shape differs from training");

    TrainedModel m;
    m.spec = spec;
    m.d = d;
    m.w = d / kFeaturesPerInterval;

    const bool needs_both = spec.kind != ModelKind::Knn;
    if (needs_both && !detail::has_both_classes(train))
        throw SingleClassTraining("training set holds a single class");

    switch (spec.kind) {
        case ModelKind::Threshold:
            detail::train_threshold(m, train);
            m.history.push_back(detail::summary_entry(m, train, val, m.tau));
            break;
        case ModelKind::LinearRegression: {
            detail::train_linear_regression(m, train);
            auto scores = detail::batch_scores(m, train);
            double t = metrics::youden_threshold(scores, detail::batch_labels(train));
            m.history.push_back(detail::summary_entry(m, train, val, t));
            break;
        }
        case ModelKind::Knn: {
            detail::train_knn(m, train);
            double t = 0.5;
            m.history.push_back(detail::summary_entry(m, train, val, t));
            break;
        }
        case ModelKind::GaussianNb:
            detail::train_gaussian_nb(m, train);
            m.history.push_back(detail::summary_entry(m, train, val, 0.5));
            break;
        case ModelKind::BernoulliNb:
            detail::train_bernoulli_nb(m, train);
            m.history.push_back(detail::summary_entry(m, train, val, 0.5));
            break;
        case ModelKind::Mlp:
            detail::train_mlp(m, train, val);
            break;
    }
    return m;
}

// ===== model file =================================================
// Line 1: "fmod1 " + header JSON (spec, shapes, scalar parameters,
// history). Then "block <name> <floats> <chunks>" records followed by
// base64 f32 chunk lines, and a final "end".

namespace detail {

constexpr std::size_t kBlockChunkFloats = 4096;

inline json spec_to_json(const ModelSpec& s) {
    return {{"kind", model_kind_name(s.kind)},
            {"k", s.k},
            {"hidden_width", s.hidden_width},
            {"epochs", s.epochs},
            {"lr", s.lr},
            {"weight_decay", s.weight_decay},
            {"momentum", s.momentum},
            {"batch", s.batch},
            {"seed", s.seed}};
}

inline ModelSpec spec_from_json(const json& j) {
    ModelSpec s;
    s.kind = model_kind_from_name(j.at("kind").get<std::string>());
    s.k = j.at("k").get<std::size_t>();
    s.hidden_width = j.at("hidden_width").get<std::size_t>();
    s.epochs = j.at("epochs").get<std::size_t>();
    s.lr = j.at("lr").get<double>();
    s.weight_decay = j.at("weight_decay").get<double>();
    s.momentum = j.at("momentum").get<double>();
    s.batch = j.at("batch").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

inline json history_to_json(const std::vector<metrics::EpochStats>& h) {
    json out = json::array();
    for (const auto& e : h)
        out.push_back({{"epoch", e.epoch},
                       {"train_auc", e.train_auc},
                       {"val_auc", e.val_auc},
                       {"val_sensitivity", e.val_sensitivity},
                       {"val_specificity", e.val_specificity},
                       {"loss", e.loss},
                       {"lr", e.lr}});
    return out;
}

inline std::vector<metrics::EpochStats> history_from_json(const json& j) {
    std::vector<metrics::EpochStats> out;
    for (const auto& e : j) {
        metrics::EpochStats s;
        s.epoch = e.at("epoch").get<std::size_t>();
        s.train_auc = e.at("train_auc").get<double>();
        s.val_auc = e.at("val_auc").get<double>();
        s.val_sensitivity = e.at("val_sensitivity").get<double>();
        s.val_specificity = e.at("val_specificity").get<double>();
        s.loss = e.at("loss").get<double>();
        s.lr = e.at("lr").get<double>();
        out.push_back(s);
    }
    return out;
}

inline void write_block(std::ostream& out, const std::string& name,
                        const std::vector<float>& data) {
    std::size_t chunks = (data.size() + kBlockChunkFloats - 1) / kBlockChunkFloats;
    out << "block " << name << ' ' << data.size() << ' ' << chunks << '\n';
    for (std::size_t c = 0; c < chunks; ++c) {
        std::size_t lo = c * kBlockChunkFloats;
        std::size_t hi = std::min(lo + kBlockChunkFloats, data.size());
        out << encode_f32_b64(std::vector<float>(data.begin() + lo, data.begin() + hi)) << '\n';
    }
}

}  // namespace detail

inline void save_model(const TrainedModel& m, const std::filesystem::path& path) {
    json header = {{"format", "fmod1"},
                   {"spec", detail::spec_to_json(m.spec)},
                   {"w", m.w},
                   {"d", m.d},
                   {"scaler_id", m.scaler_id},
                   {"tau", m.tau},
                   {"intercept", m.intercept},
                   {"prior", {m.prior[0], m.prior[1]}},
                   {"b2", static_cast<double>(m.mlp.b2)},
                   {"history", detail::history_to_json(m.history)}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.is_open()) throw StoreFailure("cannot open " + path.string());
    out << "fmod1 " << header.dump() << '\n';
    switch (m.spec.kind) {
        case ModelKind::Threshold:
            break;
        case ModelKind::LinearRegression:
            detail::write_block(out, "beta", m.beta);
            break;
        case ModelKind::Knn: {
            detail::write_block(out, "knn_x", m.knn_x);
            std::vector<float> yf(m.knn_y.begin(), m.knn_y.end());
            detail::write_block(out, "knn_y", yf);
            break;
        }
        case ModelKind::GaussianNb:
            detail::write_block(out, "gnb_mean0", m.gnb_mean[0]);
            detail::write_block(out, "gnb_mean1", m.gnb_mean[1]);
            detail::write_block(out, "gnb_var0", m.gnb_var[0]);
            detail::write_block(out, "gnb_var1", m.gnb_var[1]);
            break;
        case ModelKind::BernoulliNb:
            detail::write_block(out, "bnb_p10", m.bnb_p1[0]);
            detail::write_block(out, "bnb_p11", m.bnb_p1[1]);
            break;
        case ModelKind::Mlp:
            detail::write_block(out, "W1", m.mlp.W1);
            detail::write_block(out, "b1", m.mlp.b1);
            detail::write_block(out, "W2", m.mlp.W2);
            break;
    }
    out << "end\n";
    out.flush();
    if (!out.good()) throw StoreFailure("write failed on " + path.string());
}

inline TrainedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw MalformedModelFile("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("fmod1 ", 0) != 0)
        throw MalformedModelFile(path.string() + ": missing fmod1 header");
    TrainedModel m;
    try {
        json header = json::parse(line.substr(6));
        if (header.at("format").get<std::string>() != "fmod1")
            throw MalformedModelFile("bad format tag");
        m.spec = detail::spec_from_json(header.at("spec"));
        m.w = header.at("w").get<std::size_t>();
        m.d = header.at("d").get<std::size_t>();
        m.scaler_id = header.at("scaler_id").get<std::string>();
        m.tau = header.at("tau").get<double>();
        m.intercept = header.at("intercept").get<double>();
        m.prior[0] = header.at("prior").at(0).get<double>();
        m.prior[1] = header.at("prior").at(1).get<double>();
        m.mlp.b2 = static_cast<float>(header.at("b2").get<double>());
        m.history = detail::history_from_json(header.at("history"));
    } catch (const json::exception& e) {
        throw MalformedModelFile(path.string() + ": " + e.what());
    } catch (const MalformedDocument& e) {
        throw MalformedModelFile(path.string() + ": " + e.what());
    }

    std::map<std::string, std::vector<float>> blocks;
    bool saw_end = false;
    while (std::getline(in, line)) {
        if (line == "end") {
            saw_end = true;
            break;
        }
        std::istringstream head(line);
        std::string tag, name;
        std::size_t count = 0, chunks = 0;
        head >> tag >> name >> count >> chunks;
        if (tag != "block" || head.fail())
            throw MalformedModelFile(path.string() + ": bad block header: " + line);
        std::vector<float> data;
        data.reserve(count);
        for (std::size_t c = 0; c < chunks; ++c) {
            if (!std::getline(in, line))
                throw MalformedModelFile(path.string() + ": truncated block " + name);
            std::size_t expect = std::min(detail::kBlockChunkFloats, count - data.size());
            std::vector<float> part;
            try {
                part = decode_f32_b64(line, expect);
            } catch (const Error& e) {
                throw MalformedModelFile(path.string() + ": block " + name + ": " + e.what());
            }
            data.insert(data.end(), part.begin(), part.end());
        }
        if (data.size() != count)
            throw MalformedModelFile(path.string() + ": block " + name + " size mismatch");
        blocks.emplace(std::move(name), std::move(data));
    }
    if (!saw_end) throw MalformedModelFile(path.string() + ": missing end marker");

    auto take = [&](const char* name) {
        auto it = blocks.find(name);
        if (it == blocks.end())
            throw MalformedModelFile(path.string() + ": missing block " + name);
        return std::move(it->second);
    };
    switch (m.spec.kind) {
        case ModelKind::Threshold:
            break;
        case ModelKind::LinearRegression:
            m.beta = take("beta");
            if (m.beta.size() != m.d) throw MalformedModelFile("beta size mismatch");
            break;
        case ModelKind::Knn: {
            m.knn_x = take("knn_x");
            auto yf = take("knn_y");
            if (m.d == 0 || m.knn_x.size() != yf.size() * m.d)
                throw MalformedModelFile("knn matrix size mismatch");
            m.knn_y.assign(yf.size(), 0);
            for (std::size_t i = 0; i < yf.size(); ++i)
                m.knn_y[i] = yf[i] > 0.5f ? 1 : 0;
            break;
        }
        case ModelKind::GaussianNb:
            m.gnb_mean[0] = take("gnb_mean0");
            m.gnb_mean[1] = take("gnb_mean1");
            m.gnb_var[0] = take("gnb_var0");
            m.gnb_var[1] = take("gnb_var1");
            for (int c = 0; c < 2; ++c)
                if (m.gnb_mean[c].size() != m.d || m.gnb_var[c].size() != m.d)
                    throw MalformedModelFile("gaussian nb size mismatch");
            break;
        case ModelKind::BernoulliNb:
            m.bnb_p1[0] = take("bnb_p10");
            m.bnb_p1[1] = take("bnb_p11");
            for (int c = 0; c < 2; ++c)
                if (m.bnb_p1[c].size() != m.d)
                    throw MalformedModelFile("bernoulli nb size mismatch");
            break;
        case ModelKind::Mlp: {
            m.mlp.d = m.d;
            m.mlp.h = m.spec.hidden_width;
            m.mlp.W1 = take("W1");
            m.mlp.b1 = take("b1");
            m.mlp.W2 = take("W2");
            if (m.mlp.W1.size() != m.mlp.h * m.mlp.d || m.mlp.b1.size() != m.mlp.h ||
                m.mlp.W2.size() != m.mlp.h)
                throw MalformedModelFile("mlp parameter size mismatch");
            break;
        }
    }
    return m;
}

}  // namespace falldet::ml
