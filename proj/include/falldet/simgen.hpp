#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "falldet/domain.hpp"

namespace falldet::sim {

// ===== activities =================================================

enum class Activity {
    // daily activities
    Walking,
    Standing,
    Sitting,
    Leaning,
    TyingShoelaces,
    WalkStop,
    WalkTurn,
    JumpOver,
    StepUp,
    StepDown,
    JumpOnto,
    KneelReach,
    // falls
    Stumble,
    Slip,
    Faint,
    FallFromHeight,
    FallAfterJump,
};

inline bool is_fall(Activity a) { return a >= Activity::Stumble; }

inline const char* activity_name(Activity a) {
    switch (a) {
        case Activity::Walking: return "walking";
        case Activity::Standing: return "standing";
        case Activity::Sitting: return "sitting";
        case Activity::Leaning: return "leaning";
        case Activity::TyingShoelaces: return "tying-shoelaces";
        case Activity::WalkStop: return "walk-stop";
        case Activity::WalkTurn: return "walk-turn";
        case Activity::JumpOver: return "jump-over";
        case Activity::StepUp: return "step-up";
        case Activity::StepDown: return "step-down";
        case Activity::JumpOnto: return "jump-onto";
        case Activity::KneelReach: return "kneel-reach";
        case Activity::Stumble: return "stumble";
        case Activity::Slip: return "slip";
        case Activity::Faint: return "faint";
        case Activity::FallFromHeight: return "fall-from-height";
        case Activity::FallAfterJump: return "fall-after-jump";
    }
    return "?";
}

struct Segment {
    Activity kind = Activity::Standing;
    std::int64_t duration_ms = 0;
};

// One scripted recording session. Segment durations are multiples of
// 100ms so annotation spans sit on interval boundaries; fall segments
// are always separated by daily activity.
struct ScenarioScript {
    std::string recording_id;
    std::uint64_t seed = 0;
    std::int64_t created_at_ms = 0;
    std::vector<Segment> segments;

    std::int64_t duration_ms() const {
        std::int64_t t = 0;
        for (const auto& s : segments) t += s.duration_ms;
        return t;
    }

    std::size_t fall_count() const {
        std::size_t n = 0;
        for (const auto& s : segments) n += is_fall(s.kind);
        return n;
    }

    void validate() const {
        if (segments.empty()) throw InvariantViolation("script: no segments");
        for (const auto& s : segments) {
            if (s.duration_ms <= 0 || s.duration_ms % kIntervalMs != 0)
                throw InvariantViolation("script: segment durations must be positive multiples of 100");
        }
        for (std::size_t i = 0; i < segments.size(); ++i) {
            if (!is_fall(segments[i].kind)) continue;
            if (i == 0 || i + 1 == segments.size() || is_fall(segments[i - 1].kind) ||
                is_fall(segments[i + 1].kind))
                throw InvariantViolation("script: falls need daily activity on both sides");
        }
    }
};

// ===== signal model ===============================================

struct SignalModel {
    double hr_baseline_bpm = 70.0;
    double hr_post_fall_bpm = 100.0;
    double gait_hz = 1.8;
    double gait_amp_mg = 150.0;
    double noise_sigma_mg = 20.0;
    double freefall_mg = 200.0;
    double impact_min_mg = 2500.0;
    double impact_max_mg = 4000.0;
    double adl_spike_min_mg = 1200.0;
    // jump landings reach into the impact band: a magnitude threshold
    // cannot separate hard landings from weak impacts, pattern models can
    double adl_spike_max_mg = 3600.0;
    double restless_amp_mg = 300.0;
    double reaction_mean_ms = 350.0;
    double reaction_sd_ms = 70.0;
    double ecg_noise_uv = 15.0;
    double ecg_r_amp_uv = 1100.0;
};

// ===== scenario construction ======================================

struct ScenarioConfig {
    std::size_t n_recordings = 20;
    double target_fall_ratio = 0.22;  // of 10-interval windows
    std::int64_t mean_duration_ms = 117000;
    std::uint64_t seed = 1;
};

namespace detail {

inline std::int64_t round100(double ms) {
    return static_cast<std::int64_t>(std::llround(ms / 100.0)) * 100;
}

inline Activity pick_adl(Rng& rng) {
    static constexpr std::pair<Activity, double> table[] = {
        {Activity::Walking, 0.18},   {Activity::WalkStop, 0.07},
        {Activity::WalkTurn, 0.07},  {Activity::Standing, 0.08},
        {Activity::Sitting, 0.09},   {Activity::Leaning, 0.05},
        {Activity::TyingShoelaces, 0.05}, {Activity::KneelReach, 0.05},
        {Activity::JumpOver, 0.12},  {Activity::JumpOnto, 0.10},
        {Activity::StepUp, 0.07},    {Activity::StepDown, 0.07},
    };
    double u = rng.uniform01();
    double acc = 0.0;
    for (const auto& [kind, w] : table) {
        acc += w;
        if (u < acc) return kind;
    }
    return Activity::Walking;
}

inline Activity pick_fall(Rng& rng) {
    static constexpr Activity falls[] = {Activity::Stumble, Activity::Slip, Activity::Faint,
                                         Activity::FallFromHeight, Activity::FallAfterJump};
    return falls[rng.below(5)];
}

// cuts one inter-fall gap into 1..n daily-activity segments
inline void fill_gap(Rng& rng, std::int64_t gap_ms, std::vector<Segment>& out) {
    std::int64_t rem = gap_ms;
    while (rem > 7000 && rng.uniform01() < 0.55) {
        std::int64_t len = round100(rng.uniform(2000.0, std::min(6000.0, static_cast<double>(rem - 2500))));
        out.push_back({pick_adl(rng), len});
        rem -= len;
    }
    out.push_back({pick_adl(rng), rem});
}

}  // namespace detail

// Fall segments last 4.0-5.0s (signal to fall, impact, restless lying,
// signal to get up), so one fall taints L+w-1 of the 10-interval
// windows, about 54. The fall count per recording targets the
// requested windowed ratio; rounding error is carried across the
// suite so the aggregate ratio converges onto the target.
inline std::vector<ScenarioScript> build_scenario(const ScenarioConfig& cfg) {
    if (cfg.n_recordings == 0) throw ConfigError("n_recordings must be positive");
    if (cfg.target_fall_ratio < 0.0 || cfg.target_fall_ratio >= 1.0)
        throw ConfigError("target_fall_ratio must be in [0, 1)");
    if (cfg.mean_duration_ms < 20000) throw ConfigError("mean_duration_ms must be at least 20s");

    constexpr std::int64_t kFallMinMs = 4000, kFallMaxMs = 5000, kGapMinMs = 5000;
    const double per_fall_windows = (kFallMinMs + kFallMaxMs) / 2.0 / 100.0 + 9.0;  // 54

    std::vector<ScenarioScript> scripts;
    double carry = 0.0;
    std::int64_t created = 1735689600000;  // suite epoch; sessions appended back to back
    for (std::size_t i = 0; i < cfg.n_recordings; ++i) {
        Rng rng(substream(cfg.seed, i));
        std::int64_t T = detail::round100(static_cast<double>(cfg.mean_duration_ms) *
                                          rng.uniform(0.92, 1.08));
        double w10 = static_cast<double>(T / kIntervalMs - 9);
        double want = cfg.target_fall_ratio * w10 / per_fall_windows + carry;
        auto k = static_cast<std::int64_t>(std::llround(want));
        if (k < 0) k = 0;
        carry = want - static_cast<double>(k);

        std::int64_t k_max = (T - kGapMinMs) / (kFallMaxMs + kGapMinMs);
        if (k > k_max)
            throw InfeasibleRatio("recording " + std::to_string(i) + ": " + std::to_string(k) +
                                  " falls do not fit into " + std::to_string(T) + "ms");

        std::vector<std::int64_t> fall_len(static_cast<std::size_t>(k));
        std::int64_t fall_total = 0;
        for (auto& L : fall_len) {
            L = detail::round100(rng.uniform(static_cast<double>(kFallMinMs),
                                             static_cast<double>(kFallMaxMs)));
            fall_total += L;
        }
        std::int64_t adl_total = T - fall_total;
        std::int64_t extra = adl_total - (k + 1) * kGapMinMs;
        std::vector<std::int64_t> gaps(static_cast<std::size_t>(k) + 1, kGapMinMs);
        std::vector<double> u(gaps.size());
        double usum = 0.0;
        for (auto& v : u) {
            v = rng.uniform(0.5, 1.5);
            usum += v;
        }
        std::int64_t used = 0;
        for (std::size_t g = 0; g + 1 < gaps.size(); ++g) {
            std::int64_t share = detail::round100(static_cast<double>(extra) * u[g] / usum);
            share = (share / 100) * 100;
            gaps[g] += share;
            used += share;
        }
        gaps.back() += extra - used;

        ScenarioScript script;
        script.seed = substream(cfg.seed, 1000000 + i);
        script.created_at_ms = created;
        char idbuf[64];
        std::snprintf(idbuf, sizeof(idbuf), "r%llu-%03zu",
                      static_cast<unsigned long long>(cfg.seed), i + 1);
        script.recording_id = idbuf;
        for (std::size_t f = 0; f < static_cast<std::size_t>(k); ++f) {
            detail::fill_gap(rng, gaps[f], script.segments);
            script.segments.push_back({detail::pick_fall(rng), fall_len[f]});
        }
        detail::fill_gap(rng, gaps.back(), script.segments);
        script.validate();
        if (script.duration_ms() != T) throw InvariantViolation("script duration drifted");
        created += T + 60000;
        scripts.push_back(std::move(script));
    }
    return scripts;
}

// Subject pool; heights and weights are jittered then recentred so
// the pool means are exactly 176.2cm and 74.4kg.
inline std::vector<UserProfile> make_subjects(std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ConfigError("need at least one subject");
    Rng rng(substream(seed, 0xabcdef));
    std::vector<UserProfile> out(n);
    double hsum = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto& p = out[i];
        char buf[32];
        std::snprintf(buf, sizeof(buf), "s%02zu", i + 1);
        p.subject_id = buf;
        p.age = 20 + static_cast<int>(rng.below(8));
        p.height_cm = std::clamp(rng.normal(176.2, 6.0), 155.0, 198.0);
        p.weight_kg = std::clamp(rng.normal(74.4, 8.0), 50.0, 105.0);
        hsum += p.height_cm;
        wsum += p.weight_kg;
        p.contacts.push_back({"Contact " + std::string(buf), "+44 7700 900" + std::to_string(100 + i)});
        if (i % 2 == 0) p.contacts.push_back({"Backup " + std::string(buf), "+44 7700 901" + std::to_string(100 + i)});
    }
    double hshift = 176.2 - hsum / static_cast<double>(n);
    double wshift = 74.4 - wsum / static_cast<double>(n);
    for (auto& p : out) {
        p.height_cm += hshift;
        p.weight_kg += wshift;
    }
    return out;
}

// ===== synthesis ==================================================

namespace detail {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

inline constexpr Vec3 kUpright{0.0, 1000.0, 0.0};

struct SpikeEvt {
    std::int64_t t = 0;      // segment-local, ms
    double mag = 0.0;        // peak magnitude, mg
    bool with_dip = false;   // jump: free-fall dip right before the spike
};

struct FallTimeline {
    std::int64_t onset = 0;    // segment-local reaction latency
    std::int64_t ff_end = 0;   // free-fall ends, impact begins
    std::int64_t imp_end = 0;  // impact oscillation ends, restless lying begins
    double latency_ms = 0.0;
    double peak = 0.0;
    double ff_scale = 0.2;
    Vec3 lying;                // gravity direction after impact
    double ph1 = 0.0, ph2 = 0.0;
};

struct SegPlan {
    Activity kind = Activity::Standing;
    std::int64_t t0 = 0, t1 = 0;
    double phase = 0.0;
    Vec3 tilt = kUpright;
    std::vector<SpikeEvt> spikes;
    std::optional<FallTimeline> fall;
    bool recovery = false;  // segment opens with a get-up transient
    Vec3 recover_from = kUpright;
};

inline Vec3 tilted(double deg, bool toward_x) {
    double rad = deg * M_PI / 180.0;
    Vec3 v;
    v.y = std::cos(rad) * 1000.0;
    (toward_x ? v.x : v.z) = std::sin(rad) * 1000.0;
    return v;
}

inline double triangle(double t, double half_width) {
    double a = 1.0 - std::abs(t) / half_width;
    return a > 0.0 ? a : 0.0;
}

}  // namespace detail

// Renders a script into sensor streams. Deterministic: the same
// (script, profile, model, oracle_labels) always yields a bit-identical
// recording. With oracle_labels the fall event moves from the scripted
// sound cue to the physical onset, removing the reaction-latency slack
// from the annotation.
inline Recording synth_recording(const ScenarioScript& script, const UserProfile& profile,
                                 const SignalModel& model, bool oracle_labels = false) {
    script.validate();
    profile.validate();
    Rng rng(script.seed);
    const std::int64_t T = script.duration_ms();

    // ---- plan pass ----
    std::vector<detail::SegPlan> plan;
    plan.reserve(script.segments.size());
    std::int64_t t0 = 0;
    for (const auto& seg : script.segments) {
        detail::SegPlan sp;
        sp.kind = seg.kind;
        sp.t0 = t0;
        sp.t1 = t0 + seg.duration_ms;
        sp.phase = rng.uniform(0.0, 2.0 * M_PI);
        switch (seg.kind) {
            case Activity::Sitting: sp.tilt = detail::tilted(12.0, false); break;
            case Activity::Leaning: sp.tilt = detail::tilted(25.0, true); break;
            case Activity::TyingShoelaces: sp.tilt = detail::tilted(45.0, false); break;
            case Activity::KneelReach: sp.tilt = detail::tilted(60.0, false); break;
            default: break;
        }
        if (seg.kind == Activity::StepUp || seg.kind == Activity::StepDown) {
            std::int64_t t = 600;
            while (t < seg.duration_ms - 300) {
                detail::SpikeEvt e;
                e.t = t;
                e.mag = rng.uniform(model.adl_spike_min_mg, model.adl_spike_min_mg + 300.0);
                sp.spikes.push_back(e);
                t += 900 + static_cast<std::int64_t>(rng.below(500));
            }
        }
        if (seg.kind == Activity::JumpOver || seg.kind == Activity::JumpOnto) {
            int jumps = seg.duration_ms > 6000 ? 2 : 1;
            for (int j = 0; j < jumps; ++j) {
                detail::SpikeEvt e;
                e.t = static_cast<std::int64_t>(
                    rng.uniform(0.25, 0.75) * static_cast<double>(seg.duration_ms) / jumps +
                    j * seg.duration_ms / jumps);
                e.mag = rng.uniform(model.adl_spike_min_mg + 200.0, model.adl_spike_max_mg);
                e.with_dip = true;
                sp.spikes.push_back(e);
            }
        }
        if (is_fall(seg.kind)) {
            detail::FallTimeline f;
            f.latency_ms = rng.truncated_normal_nonneg(model.reaction_mean_ms, model.reaction_sd_ms);
            f.onset = static_cast<std::int64_t>(std::llround(f.latency_ms));
            std::int64_t ff_dur = 450;
            f.ff_scale = model.freefall_mg / 1000.0;
            switch (seg.kind) {
                case Activity::Slip: ff_dur = 350; break;
                case Activity::Faint: ff_dur = 600; f.ff_scale = 0.35; break;
                case Activity::FallFromHeight: ff_dur = 550; f.ff_scale = 0.15; break;
                default: break;
            }
            f.ff_end = f.onset + ff_dur;
            f.imp_end = f.ff_end + 500;
            f.peak = rng.uniform(model.impact_min_mg + 100.0, model.impact_max_mg - 100.0);
            bool toward_x = rng.uniform01() < 0.5;
            double sign = rng.uniform01() < 0.5 ? 1.0 : -1.0;
            (toward_x ? f.lying.x : f.lying.z) = sign * 1000.0;
            f.ph1 = rng.uniform(0.0, 2.0 * M_PI);
            f.ph2 = rng.uniform(0.0, 2.0 * M_PI);
            if (f.imp_end >= seg.duration_ms)
                throw InvariantViolation("fall segment too short for its timeline");
            sp.fall = f;
        }
        t0 = sp.t1;
        plan.push_back(std::move(sp));
    }
    for (std::size_t i = 1; i < plan.size(); ++i) {
        if (plan[i - 1].fall) {
            plan[i].recovery = true;
            plan[i].recover_from = plan[i - 1].fall->lying;
        }
    }

    // ---- heart rate curve and R-peak schedule ----
    auto heart_rate = [&](double t) {
        double elev = 0.0;
        for (const auto& sp : plan) {
            if (!sp.fall) continue;
            double imp = static_cast<double>(sp.t0 + sp.fall->ff_end);
            double end = static_cast<double>(sp.t1);
            double e = 0.0;
            if (t >= imp && t < end)
                e = std::min(1.0, (t - imp) / 3000.0);
            else if (t >= end)
                e = std::exp(-(t - end) / 8000.0);
            elev = std::max(elev, e);
        }
        return model.hr_baseline_bpm + (model.hr_post_fall_bpm - model.hr_baseline_bpm) * elev;
    };
    std::vector<double> r_times;
    double r = rng.uniform(0.0, 700.0);
    while (r < static_cast<double>(T)) {
        r_times.push_back(r);
        double rr = 60000.0 / heart_rate(r);
        r += rr * rng.uniform(0.98, 1.02);
    }

    // ---- accel pass ----
    Recording rec;
    rec.profile = profile;
    rec.meta.recording_id = script.recording_id;
    rec.meta.subject_id = profile.subject_id;
    rec.meta.created_at_ms = script.created_at_ms;

    std::size_t seg_idx = 0;
    for (std::int64_t k = 0;; ++k) {
        std::int64_t t = accel_grid_t(k);
        if (t >= T) break;
        while (t >= plan[seg_idx].t1) ++seg_idx;
        const auto& sp = plan[seg_idx];
        double tau = static_cast<double>(t - sp.t0);
        detail::Vec3 a = sp.tilt;
        double noise_scale = 1.0;
        bool clean = false;

        auto add_gait = [&](double amp_scale, double f_scale) {
            double w = 2.0 * M_PI * model.gait_hz * f_scale * tau / 1000.0 + sp.phase;
            a.y += model.gait_amp_mg * amp_scale * std::sin(w);
            a.x += model.gait_amp_mg * amp_scale * 0.35 * std::sin(w + 1.3);
            a.z += model.gait_amp_mg * amp_scale * 0.25 * std::sin(2.0 * w + 0.7);
        };

        switch (sp.kind) {
            case Activity::Walking: add_gait(1.0, 1.0); break;
            case Activity::WalkStop:
                if (tau < 0.6 * static_cast<double>(sp.t1 - sp.t0)) add_gait(1.0, 1.0);
                break;
            case Activity::WalkTurn: {
                add_gait(1.0, 1.0 + 0.1 * std::sin(2.0 * M_PI * 0.2 * tau / 1000.0));
                a.x += 80.0 * std::sin(2.0 * M_PI * 0.35 * tau / 1000.0 + sp.phase);
                break;
            }
            case Activity::TyingShoelaces:
            case Activity::KneelReach: {
                double dur = static_cast<double>(sp.t1 - sp.t0);
                if (tau < 0.15 * dur || tau > 0.85 * dur) a = detail::kUpright;
                noise_scale = 2.0;
                break;
            }
            case Activity::StepUp:
            case Activity::StepDown:
            case Activity::JumpOver:
            case Activity::JumpOnto:
                add_gait(sp.kind == Activity::StepUp || sp.kind == Activity::StepDown ? 0.8 : 0.6,
                         1.0);
                for (const auto& e : sp.spikes) {
                    double dt = tau - static_cast<double>(e.t);
                    if (e.with_dip && dt >= -150.0 && dt < 0.0) {
                        a.x *= 0.35;
                        a.y *= 0.35;
                        a.z *= 0.35;
                    }
                    if (dt >= 0.0 && dt < 250.0) {
                        double env = detail::triangle(dt, 25.0);
                        a.y += (e.mag - 1000.0) * env;
                        if (dt >= 25.0)
                            a.y += 150.0 * std::exp(-(dt - 25.0) / 90.0) *
                                   std::cos(2.0 * M_PI * 9.0 * (dt - 25.0) / 1000.0);
                    }
                }
                break;
            case Activity::Standing:
            case Activity::Sitting:
            case Activity::Leaning:
                break;
            default: {  // falls
                const auto& f = *sp.fall;
                if (tau < static_cast<double>(f.onset)) {
                    a = detail::kUpright;
                    if (sp.kind == Activity::Stumble && tau >= static_cast<double>(f.onset) - 150.0)
                        a.z += 350.0 * detail::triangle(tau - (static_cast<double>(f.onset) - 75.0), 75.0);
                    if (sp.kind == Activity::FallAfterJump) add_gait(0.6, 1.0);
                } else if (tau < static_cast<double>(f.ff_end)) {
                    a.x = detail::kUpright.x * f.ff_scale;
                    a.y = detail::kUpright.y * f.ff_scale;
                    a.z = detail::kUpright.z * f.ff_scale;
                    if (sp.kind == Activity::FallAfterJump && tau < static_cast<double>(f.onset) + 60.0)
                        a.y += 1400.0 * detail::triangle(tau - static_cast<double>(f.onset) - 30.0, 30.0);
                } else if (tau < static_cast<double>(f.imp_end)) {
                    double ti = tau - static_cast<double>(f.ff_end);
                    a = f.lying;
                    double scale;
                    if (ti < 10.0) {
                        scale = 1.0;  // peak hold: one clean sample at the drawn magnitude
                        clean = true;
                    } else {
                        scale = std::exp(-(ti - 10.0) / 150.0) *
                                std::cos(2.0 * M_PI * 8.0 * (ti - 10.0) / 1000.0);
                    }
                    double boost = (f.peak - 1000.0) * scale;
                    a.x += (f.lying.x / 1000.0) * boost;
                    a.y += (f.lying.y / 1000.0) * boost;
                    a.z += (f.lying.z / 1000.0) * boost;
                } else {
                    double ts = (tau - static_cast<double>(f.imp_end)) / 1000.0;
                    double wob = model.restless_amp_mg *
                                     std::sin(2.0 * M_PI * 0.9 * ts + f.ph1) +
                                 0.3 * model.restless_amp_mg *
                                     std::sin(2.0 * M_PI * 2.3 * ts + f.ph2);
                    a = f.lying;
                    a.x += (f.lying.x / 1000.0) * wob;
                    a.y += (f.lying.y / 1000.0) * wob;
                    a.z += (f.lying.z / 1000.0) * wob;
                    noise_scale = 1.5;
                }
            }
        }
        if (sp.recovery && tau < 800.0) {
            double al = tau / 800.0;
            a.x = sp.recover_from.x * (1.0 - al) + detail::kUpright.x * al;
            a.y = sp.recover_from.y * (1.0 - al) + detail::kUpright.y * al;
            a.z = sp.recover_from.z * (1.0 - al) + detail::kUpright.z * al;
            double norm = std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z);
            if (norm > 1.0) {
                a.x *= 1000.0 / norm;
                a.y *= 1000.0 / norm;
                a.z *= 1000.0 / norm;
            }
            a.y += 120.0 * std::sin(2.0 * M_PI * 3.0 * tau / 1000.0);
            noise_scale = 2.0;
        }
        double nx = rng.normal(0.0, model.noise_sigma_mg) * noise_scale;
        double ny = rng.normal(0.0, model.noise_sigma_mg) * noise_scale;
        double nz = rng.normal(0.0, model.noise_sigma_mg) * noise_scale;
        if (!clean) {
            a.x += nx;
            a.y += ny;
            a.z += nz;
        }
        rec.accel.push_back({t, static_cast<float>(a.x), static_cast<float>(a.y),
                             static_cast<float>(a.z)});
    }

    // ---- ecg pass ----
    std::size_t ri = 0;
    for (std::int64_t k = 0;; ++k) {
        std::int64_t t = ecg_grid_t(k);
        if (t >= T) break;
        double td = static_cast<double>(t);
        while (ri + 1 < r_times.size() && r_times[ri + 1] < td - 200.0) ++ri;
        double uv = rng.normal(0.0, model.ecg_noise_uv) +
                    40.0 * std::sin(2.0 * M_PI * 0.25 * td / 1000.0);
        for (std::size_t j = ri; j < r_times.size() && r_times[j] < td + 200.0; ++j) {
            double dt = td - r_times[j];
            uv += model.ecg_r_amp_uv * std::exp(-dt * dt / (2.0 * 7.0 * 7.0));
            uv -= 180.0 * std::exp(-(dt + 25.0) * (dt + 25.0) / (2.0 * 10.0 * 10.0));
            uv += 160.0 * std::exp(-(dt - 120.0) * (dt - 120.0) / (2.0 * 35.0 * 35.0));
        }
        rec.ecg.push_back({t, static_cast<float>(uv)});
    }

    // ---- events ----
    for (const auto& sp : plan) {
        if (!sp.fall) continue;
        std::int64_t fall_t = oracle_labels ? sp.t0 + sp.fall->onset : sp.t0;
        rec.events.push_back({fall_t, Signal::Fall});
        rec.events.push_back({sp.t1, Signal::GetUp});
    }

    std::size_t n_chunks = expected_chunk_count(rec);
    for (std::size_t i = 0; i < n_chunks; ++i) rec.meta.chunk_indexes.push_back(i);
    rec.validate();
    return rec;
}

}  // namespace falldet::sim
