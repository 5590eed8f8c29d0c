#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "falldet/domain.hpp"
#include "falldet/recording_codec.hpp"

namespace falldet::prep {

// Feature layout of one 100ms interval row:
//   [0,13)   ECG uV
//   [13,33)  accel x mg
//   [33,53)  accel y mg
//   [53,73)  accel z mg
//   73       height_cm
//   74       weight_kg
inline constexpr int kEcgOffset = 0;
inline constexpr int kAxOffset = 13;
inline constexpr int kAyOffset = 33;
inline constexpr int kAzOffset = 53;
inline constexpr int kHeightCol = 73;
inline constexpr int kWeightCol = 74;

using IntervalRow = std::array<float, kFeaturesPerInterval>;

namespace detail {

// Gathers per-interval sample groups for a stream sampled on a grid
// with nominal spacing `step_ms`. A sample covers [t, t+step), so the
// stream reaches the end of interval k iff last_t + step >= (k+1)*100.
template <typename S>
std::size_t covered_intervals(const std::vector<S>& stream, std::int64_t step_ms) {
    if (stream.empty()) return 0;
    return static_cast<std::size_t>((stream.back().t_ms + step_ms) / kIntervalMs);
}

// Fills `slots` values for interval [lo, hi) from `stream[pos...)`,
// calling `emit(sample)` exactly `slots` times. Deficits repeat the
// interval's last available sample (or the carry when the interval is
// empty); surpluses are truncated from the tail.
template <typename S, typename Emit>
void fill_slot(const std::vector<S>& stream, std::size_t& pos, std::int64_t lo, std::int64_t hi,
               int slots, const S*& carry, Emit&& emit) {
    std::size_t begin = pos;
    while (pos < stream.size() && stream[pos].t_ms < hi) ++pos;
    std::size_t count = pos - begin;
    const S* last = nullptr;
    for (std::size_t i = 0; i < std::min<std::size_t>(count, slots); ++i) {
        last = &stream[begin + i];
        emit(*last);
    }
    if (count < static_cast<std::size_t>(slots)) {
        const S* pad = last ? last : carry;
        if (!pad) pad = &stream.front();  // stream starts late: back-fill
        for (std::size_t i = count; i < static_cast<std::size_t>(slots); ++i) emit(*pad);
    }
    if (last) carry = last;
    (void)lo;
}

}  // namespace detail

// Resamples a recording onto the 100ms interval grid. The trailing
// partial interval (one not fully covered by every sensor stream) is
// dropped.
inline std::vector<IntervalRow> to_intervals(const Recording& r) {
    if (r.ecg.empty() || r.accel.empty()) throw EmptyRecording("recording has an empty sensor stream");
    std::size_t n = std::min(detail::covered_intervals(r.ecg, kEcgStepMs),
                             detail::covered_intervals(r.accel, kAccelStepMs));
    if (n == 0) throw TooShort("recording shorter than one interval");

    std::vector<IntervalRow> rows(n);
    float height = static_cast<float>(r.profile.height_cm);
    float weight = static_cast<float>(r.profile.weight_kg);

    std::size_t pe = 0, pa = 0;
    const EcgSample* carry_e = nullptr;
    const AccelSample* carry_a = nullptr;
    for (std::size_t k = 0; k < n; ++k) {
        std::int64_t lo = static_cast<std::int64_t>(k) * kIntervalMs;
        std::int64_t hi = lo + kIntervalMs;
        IntervalRow& row = rows[k];
        int ei = 0;
        detail::fill_slot(r.ecg, pe, lo, hi, kEcgPerInterval, carry_e,
                          [&](const EcgSample& s) { row[kEcgOffset + ei++] = s.uv; });
        int ai = 0;
        detail::fill_slot(r.accel, pa, lo, hi, kAccelPerInterval, carry_a,
                          [&](const AccelSample& s) {
                              row[kAxOffset + ai] = s.x_mg;
                              row[kAyOffset + ai] = s.y_mg;
                              row[kAzOffset + ai] = s.z_mg;
                              ++ai;
                          });
        row[kHeightCol] = height;
        row[kWeightCol] = weight;
    }
    return rows;
}

// Per-interval fall labels. Interval k is 1 iff it overlaps any
// [fall, getup) span. lag_ms shifts labels earlier by lag_ms/100
// intervals (the tail fills with 0), teaching models to fire that
// much sooner.
inline std::vector<std::uint8_t> label_intervals(const std::vector<LabelEvent>& events,
                                                 std::size_t n_intervals, std::int64_t lag_ms) {
    if (lag_ms < 0 || lag_ms % kIntervalMs != 0)
        throw ConfigError("lag_ms must be a non-negative multiple of 100");
    std::vector<std::uint8_t> base(n_intervals, 0);
    std::int64_t fall_t = -1;
    bool open = false;
    auto close_span = [&](std::int64_t getup_t) {
        std::int64_t lo = std::max<std::int64_t>(fall_t / kIntervalMs, 0);
        std::int64_t hi = std::min<std::int64_t>((getup_t - 1) / kIntervalMs + 1,
                                                 static_cast<std::int64_t>(n_intervals));
        for (std::int64_t k = lo; k < hi; ++k) base[static_cast<std::size_t>(k)] = 1;
    };
    std::int64_t prev_t = -1;
    for (const auto& e : events) {
        if (e.t_ms <= prev_t) throw UnpairedSignal("events not strictly increasing");
        prev_t = e.t_ms;
        if (e.signal == Signal::Fall) {
            if (open) throw UnpairedSignal("fall signal while a fall is open");
            fall_t = e.t_ms;
            open = true;
        } else {
            if (!open) throw UnpairedSignal("getup signal without a preceding fall");
            close_span(e.t_ms);
            open = false;
        }
    }
    if (open) throw UnpairedSignal("fall signal without a getup");

    if (lag_ms == 0) return base;
    std::size_t shift = static_cast<std::size_t>(lag_ms / kIntervalMs);
    std::vector<std::uint8_t> shifted(n_intervals, 0);
    for (std::size_t k = 0; k + shift < n_intervals; ++k) shifted[k] = base[k + shift];
    return shifted;
}

// Window label: 1 iff any of its w interval labels is 1.
inline std::uint8_t existence_label(const std::uint8_t* labels, std::size_t w) {
    for (std::size_t i = 0; i < w; ++i)
        if (labels[i]) return 1;
    return 0;
}

struct WindowSample {
    std::vector<float> x;  // w * 75, row-major by interval
    std::uint8_t label = 0;
    std::size_t start_interval = 0;
};

inline std::size_t window_count(std::size_t n_intervals, std::size_t w, std::size_t stride) {
    return (n_intervals - w) / stride + 1;
}

inline std::vector<WindowSample> make_windows(const std::vector<IntervalRow>& intervals,
                                              const std::vector<std::uint8_t>& labels,
                                              std::size_t w, std::size_t stride = 1) {
    if (w == 0 || stride == 0) throw ConfigError("w and stride must be positive");
    if (intervals.size() != labels.size()) throw ShapeMismatch("intervals/labels length mismatch");
    if (intervals.size() < w) throw TooShort("fewer intervals than the window length");
    std::size_t count = window_count(intervals.size(), w, stride);
    std::vector<WindowSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        WindowSample s;
        s.start_interval = i * stride;
        s.x.resize(w * kFeaturesPerInterval);
        for (std::size_t j = 0; j < w; ++j)
            std::copy(intervals[s.start_interval + j].begin(), intervals[s.start_interval + j].end(),
                      s.x.begin() + j * kFeaturesPerInterval);
        s.label = existence_label(labels.data() + s.start_interval, w);
        out.push_back(std::move(s));
    }
    return out;
}

// ===== scaling ====================================================

enum class ScalerMethod { Standardise, Normalise, LogStandardise };

inline const char* scaler_method_name(ScalerMethod m) {
    switch (m) {
        case ScalerMethod::Standardise: return "standardise";
        case ScalerMethod::Normalise: return "normalise";
        case ScalerMethod::LogStandardise: return "log-standardise";
    }
    return "?";
}

inline ScalerMethod scaler_method_from_name(const std::string& s) {
    if (s == "standardise") return ScalerMethod::Standardise;
    if (s == "normalise") return ScalerMethod::Normalise;
    if (s == "log-standardise") return ScalerMethod::LogStandardise;
    throw ConfigError("unknown scaler method '" + s + "'");
}

// Per-column statistics over training interval rows. sigma is the
// population standard deviation. For LogStandardise the body-metric
// columns (73, 74) are transformed with ln first and the statistics
// are taken in log domain.
struct ScalerParams {
    ScalerMethod method = ScalerMethod::Standardise;
    std::array<double, kFeaturesPerInterval> mu{};
    std::array<double, kFeaturesPerInterval> sigma{};
    std::array<double, kFeaturesPerInterval> min{};
    std::array<double, kFeaturesPerInterval> max{};
    std::string fitted_on;

    bool log_column(int col) const {
        return method == ScalerMethod::LogStandardise && (col == kHeightCol || col == kWeightCol);
    }

    double pre(int col, double x) const {
        if (!log_column(col)) return x;
        if (!(x > 0.0)) throw InvariantViolation("log scaling needs positive values");
        return std::log(x);
    }

    // scaled value for column `col`; degenerate columns map to 0
    double transform(int col, double x) const {
        double v = pre(col, x);
        if (method == ScalerMethod::Normalise) {
            double range = max[col] - min[col];
            if (range < 1e-12) return 0.0;
            return (v - min[col]) / range;
        }
        if (sigma[col] < 1e-12) return 0.0;
        return (v - mu[col]) / sigma[col];
    }

    double inverse(int col, double y) const {
        double v;
        if (method == ScalerMethod::Normalise) {
            double range = max[col] - min[col];
            v = range < 1e-12 ? min[col] : y * range + min[col];
        } else {
            v = sigma[col] < 1e-12 ? mu[col] : y * sigma[col] + mu[col];
        }
        return log_column(col) ? std::exp(v) : v;
    }
};

inline ScalerParams fit_scaler(const std::vector<WindowSample>& train, ScalerMethod method,
                               const std::string& fitted_on) {
    std::size_t rows = 0;
    for (const auto& s : train) rows += s.x.size() / kFeaturesPerInterval;
    if (rows < 2) throw TooFewSamples("scaler needs at least 2 training intervals");

    ScalerParams p;
    p.method = method;
    p.fitted_on = fitted_on;
    std::array<double, kFeaturesPerInterval> sum{};
    p.min.fill(std::numeric_limits<double>::infinity());
    p.max.fill(-std::numeric_limits<double>::infinity());
    for (const auto& s : train) {
        std::size_t w = s.x.size() / kFeaturesPerInterval;
        for (std::size_t r = 0; r < w; ++r) {
            const float* row = s.x.data() + r * kFeaturesPerInterval;
            for (int c = 0; c < kFeaturesPerInterval; ++c) {
                double v = p.pre(c, row[c]);
                sum[c] += v;
                p.min[c] = std::min(p.min[c], v);
                p.max[c] = std::max(p.max[c], v);
            }
        }
    }
    for (int c = 0; c < kFeaturesPerInterval; ++c) p.mu[c] = sum[c] / static_cast<double>(rows);
    std::array<double, kFeaturesPerInterval> ss{};
    for (const auto& s : train) {
        std::size_t w = s.x.size() / kFeaturesPerInterval;
        for (std::size_t r = 0; r < w; ++r) {
            const float* row = s.x.data() + r * kFeaturesPerInterval;
            for (int c = 0; c < kFeaturesPerInterval; ++c) {
                double d = p.pre(c, row[c]) - p.mu[c];
                ss[c] += d * d;
            }
        }
    }
    for (int c = 0; c < kFeaturesPerInterval; ++c)
        p.sigma[c] = std::sqrt(ss[c] / static_cast<double>(rows));
    return p;
}

// In-place per-column transform; math in double, storage in f32. The
// detector applies the identical function to its live ring buffer.
inline void apply_scaler(const ScalerParams& p, std::vector<float>& x) {
    if (x.size() % kFeaturesPerInterval != 0) throw ShapeMismatch("window length not a row multiple");
    std::size_t w = x.size() / kFeaturesPerInterval;
    for (std::size_t r = 0; r < w; ++r) {
        float* row = x.data() + r * kFeaturesPerInterval;
        for (int c = 0; c < kFeaturesPerInterval; ++c)
            row[c] = static_cast<float>(p.transform(c, row[c]));
    }
}

inline void apply_scaler(const ScalerParams& p, std::vector<WindowSample>& windows) {
    for (auto& s : windows) apply_scaler(p, s.x);
}

inline json scaler_to_json(const ScalerParams& p) {
    return {{"method", scaler_method_name(p.method)},
            {"mu", std::vector<double>(p.mu.begin(), p.mu.end())},
            {"sigma", std::vector<double>(p.sigma.begin(), p.sigma.end())},
            {"min", std::vector<double>(p.min.begin(), p.min.end())},
            {"max", std::vector<double>(p.max.begin(), p.max.end())},
            {"fitted_on", p.fitted_on}};
}

inline ScalerParams scaler_from_json(const json& j) {
    ScalerParams p;
    try {
        p.method = scaler_method_from_name(j.at("method").get<std::string>());
        auto load = [&](const char* key, std::array<double, kFeaturesPerInterval>& dst) {
            auto v = j.at(key).get<std::vector<double>>();
            if (v.size() != kFeaturesPerInterval) throw ShapeMismatch("scaler array size");
            std::copy(v.begin(), v.end(), dst.begin());
        };
        load("mu", p.mu);
        load("sigma", p.sigma);
        load("min", p.min);
        load("max", p.max);
        p.fitted_on = j.at("fitted_on").get<std::string>();
    } catch (const json::exception& e) {
        throw MalformedDocument(std::string("scaler params: ") + e.what());
    }
    return p;
}

// ===== splitting ==================================================

struct SplitSizes {
    std::size_t train = 0, val = 0, test = 0;
};

inline SplitSizes split_sizes(std::size_t n, double train_ratio, double val_ratio) {
    SplitSizes s;
    s.train = static_cast<std::size_t>(std::floor(train_ratio * static_cast<double>(n)));
    s.val = static_cast<std::size_t>(std::floor(val_ratio * static_cast<double>(n)));
    s.test = n - s.train - s.val;
    return s;
}

struct Split {
    std::vector<std::size_t> train, val, test;
};

// Seeded shuffle then contiguous cut: floor(r_train*n) / floor(r_val*n) /
// remainder. Windows overlap in time, so shuffled splits share
// near-duplicate content across sets; scores on them are optimistic
// for deployment but match the offline protocol this pipeline targets.
inline Split split_dataset(std::size_t n, std::uint64_t seed, double train_ratio = 0.6,
                           double val_ratio = 0.2) {
    if (n < 5) throw TooFewSamples("need at least 5 windows to split");
    if (train_ratio <= 0.0 || val_ratio <= 0.0 || train_ratio + val_ratio >= 1.0)
        throw ConfigError("split ratios must be positive and sum below 1");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);
    SplitSizes sz = split_sizes(n, train_ratio, val_ratio);
    Split sp;
    sp.train.assign(idx.begin(), idx.begin() + sz.train);
    sp.val.assign(idx.begin() + sz.train, idx.begin() + sz.train + sz.val);
    sp.test.assign(idx.begin() + sz.train + sz.val, idx.end());
    return sp;
}

// ===== dataset ====================================================

struct Dataset {
    std::size_t w = 0;
    std::size_t stride = 1;
    std::int64_t lag_ms = 0;
    std::uint64_t seed = 0;
    std::string id;
    ScalerParams scaler;
    std::vector<WindowSample> train, val, test;

    std::size_t n_features() const { return w * kFeaturesPerInterval; }
};

// Dataset file: header JSON line, then one JSON line per sample with
// its split tag, label and base64 f32 row-major window matrix.
inline void save_dataset(const Dataset& d, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw StoreFailure("cannot write " + path);
    json head = {{"format", "fds1"},
                 {"w", d.w},
                 {"n_features", kFeaturesPerInterval},
                 {"stride", d.stride},
                 {"lag_ms", d.lag_ms},
                 {"seed", d.seed},
                 {"dataset_id", d.id},
                 {"scaler", scaler_to_json(d.scaler)},
                 {"split_sizes",
                  {{"train", d.train.size()}, {"val", d.val.size()}, {"test", d.test.size()}}}};
    out << head.dump() << '\n';
    auto dump_split = [&](const char* tag, const std::vector<WindowSample>& v) {
        for (const auto& s : v) {
            json line = {{"split", tag},
                         {"y", static_cast<int>(s.label)},
                         {"start", s.start_interval},
                         {"x", encode_f32_b64(s.x)}};
            out << line.dump() << '\n';
        }
    };
    dump_split("train", d.train);
    dump_split("val", d.val);
    dump_split("test", d.test);
    if (!out) throw StoreFailure("failed writing " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StoreFailure("cannot read " + path);
    std::string line;
    if (!std::getline(in, line)) throw MalformedDocument(path + ": empty dataset file");
    Dataset d;
    std::size_t expect_train, expect_val, expect_test;
    try {
        json head = json::parse(line);
        if (head.at("format").get<std::string>() != "fds1")
            throw MalformedDocument("unknown dataset format");
        d.w = head.at("w").get<std::size_t>();
        d.stride = head.at("stride").get<std::size_t>();
        d.lag_ms = head.at("lag_ms").get<std::int64_t>();
        d.seed = head.at("seed").get<std::uint64_t>();
        d.id = head.at("dataset_id").get<std::string>();
        d.scaler = scaler_from_json(head.at("scaler"));
        expect_train = head.at("split_sizes").at("train").get<std::size_t>();
        expect_val = head.at("split_sizes").at("val").get<std::size_t>();
        expect_test = head.at("split_sizes").at("test").get<std::size_t>();
    } catch (const json::exception& e) {
        throw MalformedDocument(path + ": " + e.what());
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            WindowSample s;
            s.label = static_cast<std::uint8_t>(j.at("y").get<int>());
            s.start_interval = j.at("start").get<std::size_t>();
            s.x = decode_f32_b64(j.at("x").get<std::string>(), d.w * kFeaturesPerInterval);
            std::string tag = j.at("split").get<std::string>();
            if (tag == "train")
                d.train.push_back(std::move(s));
            else if (tag == "val")
                d.val.push_back(std::move(s));
            else if (tag == "test")
                d.test.push_back(std::move(s));
            else
                throw MalformedDocument("unknown split tag '" + tag + "'");
        } catch (const json::exception& e) {
            throw MalformedDocument(path + " line " + std::to_string(line_no) + ": " + e.what());
        } catch (const MalformedDocument& e) {
            throw MalformedDocument(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (d.train.size() != expect_train || d.val.size() != expect_val || d.test.size() != expect_test)
        throw MalformedDocument(path + ": split sizes disagree with header");
    return d;
}

// ===== recording -> windows pipeline ==============================

struct WindowingConfig {
    std::size_t w = 20;
    std::int64_t lag_ms = 0;
    std::size_t stride = 1;
};

inline std::vector<WindowSample> windows_from_recording(const Recording& r,
                                                        const WindowingConfig& cfg) {
    auto intervals = to_intervals(r);
    auto labels = label_intervals(r.events, intervals.size(), cfg.lag_ms);
    return make_windows(intervals, labels, cfg.w, cfg.stride);
}

inline double fall_ratio(const std::vector<WindowSample>& windows) {
    if (windows.empty()) throw EmptyInput("no windows");
    std::size_t pos = 0;
    for (const auto& s : windows) pos += s.label;
    return static_cast<double>(pos) / static_cast<double>(windows.size());
}

}  // namespace falldet::prep
