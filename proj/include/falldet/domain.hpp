#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "falldet/common.hpp"

namespace falldet {

// Sampling grid shared by the generator, the chunker and the
// windowing stage. Times are integer milliseconds from recording
// start; wall-clock only ever appears in RecordingMeta.created_at_ms.
inline constexpr int kEcgHz = 130;
inline constexpr int kAccelHz = 200;
inline constexpr std::int64_t kAccelStepMs = 5;   // 1000 / 200
inline constexpr std::int64_t kEcgStepMs = 8;     // round(1000 / 130)
inline constexpr std::int64_t kChunkSpanMs = 5000;
inline constexpr std::int64_t kIntervalMs = 100;
inline constexpr int kEcgPerInterval = 13;
inline constexpr int kAccelPerInterval = 20;
inline constexpr int kFeaturesPerInterval = 75;  // 13 ECG + 3*20 accel + height + weight

inline std::int64_t ecg_grid_t(std::int64_t k) {
    return static_cast<std::int64_t>(std::llround(static_cast<double>(k) * 1000.0 / kEcgHz));
}

inline std::int64_t accel_grid_t(std::int64_t k) { return k * kAccelStepMs; }

struct EcgSample {
    std::int64_t t_ms = 0;
    float uv = 0.0f;

    bool operator==(const EcgSample&) const = default;
};

struct AccelSample {
    std::int64_t t_ms = 0;
    float x_mg = 0.0f;
    float y_mg = 0.0f;
    float z_mg = 0.0f;

    bool operator==(const AccelSample&) const = default;

    double magnitude() const {
        return std::sqrt(static_cast<double>(x_mg) * x_mg +
                         static_cast<double>(y_mg) * y_mg +
                         static_cast<double>(z_mg) * z_mg);
    }
};

enum class Signal { Fall, GetUp };

inline const char* signal_name(Signal s) { return s == Signal::Fall ? "fall" : "getup"; }

inline Signal signal_from_name(const std::string& s) {
    if (s == "fall") return Signal::Fall;
    if (s == "getup") return Signal::GetUp;
    throw MalformedDocument("unknown signal '" + s + "'");
}

// Ground-truth annotation; a fall spans [Fall event, GetUp event).
struct LabelEvent {
    std::int64_t t_ms = 0;
    Signal signal = Signal::Fall;

    bool operator==(const LabelEvent&) const = default;
};

struct EmergencyContact {
    std::string name;
    std::string phone;

    bool operator==(const EmergencyContact&) const = default;
};

struct UserProfile {
    std::string subject_id;
    int age = 0;
    double height_cm = 0.0;
    double weight_kg = 0.0;
    std::vector<EmergencyContact> contacts;

    bool operator==(const UserProfile&) const = default;

    void validate() const {
        if (subject_id.empty()) throw InvariantViolation("profile: empty subject_id");
        if (!(height_cm > 0.0)) throw InvariantViolation("profile: height_cm must be > 0");
        if (!(weight_kg > 0.0)) throw InvariantViolation("profile: weight_kg must be > 0");
        if (age < 0) throw InvariantViolation("profile: negative age");
    }
};

struct RecordingMeta {
    std::string recording_id;
    std::string subject_id;
    std::vector<std::size_t> chunk_indexes;  // exactly 0..n-1, in order
    std::int64_t created_at_ms = 0;          // wall clock, ms since epoch

    bool operator==(const RecordingMeta&) const = default;

    void validate() const {
        if (recording_id.empty()) throw InvariantViolation("meta: empty recording_id");
        if (subject_id.empty()) throw InvariantViolation("meta: empty subject_id");
        for (std::size_t i = 0; i < chunk_indexes.size(); ++i)
            if (chunk_indexes[i] != i)
                throw InvariantViolation("meta: chunk_indexes must be 0..n-1, got " +
                                         std::to_string(chunk_indexes[i]) + " at position " +
                                         std::to_string(i));
    }
};

// One transmission unit: all samples and events whose t_ms lies in
// [index*5000, (index+1)*5000).
struct Chunk {
    std::string recording_id;
    std::size_t index = 0;
    std::vector<EcgSample> ecg;
    std::vector<AccelSample> accel;
    std::vector<LabelEvent> events;

    bool operator==(const Chunk&) const = default;

    void validate() const {
        if (recording_id.empty()) throw InvariantViolation("chunk: empty recording_id");
        std::int64_t lo = static_cast<std::int64_t>(index) * kChunkSpanMs;
        std::int64_t hi = lo + kChunkSpanMs;
        auto in_span = [&](std::int64_t t) { return t >= lo && t < hi; };
        std::int64_t prev = -1;
        for (const auto& s : ecg) {
            if (!in_span(s.t_ms)) throw InvariantViolation("chunk: ecg sample outside span");
            if (s.t_ms <= prev) throw InvariantViolation("chunk: ecg not strictly increasing");
            prev = s.t_ms;
        }
        prev = -1;
        for (const auto& s : accel) {
            if (!in_span(s.t_ms)) throw InvariantViolation("chunk: accel sample outside span");
            if (s.t_ms <= prev) throw InvariantViolation("chunk: accel not strictly increasing");
            prev = s.t_ms;
        }
        prev = -1;
        for (const auto& e : events) {
            if (!in_span(e.t_ms)) throw InvariantViolation("chunk: event outside span");
            if (e.t_ms <= prev) throw InvariantViolation("chunk: events not strictly increasing");
            prev = e.t_ms;
        }
    }
};

struct Recording {
    RecordingMeta meta;
    UserProfile profile;
    std::vector<EcgSample> ecg;
    std::vector<AccelSample> accel;
    std::vector<LabelEvent> events;

    bool operator==(const Recording&) const = default;

    std::int64_t duration_ms() const {
        std::int64_t d = 0;
        if (!ecg.empty()) d = std::max(d, ecg.back().t_ms);
        if (!accel.empty()) d = std::max(d, accel.back().t_ms);
        if (!events.empty()) d = std::max(d, events.back().t_ms);
        return d;
    }

    void validate() const {
        meta.validate();
        profile.validate();
        if (meta.subject_id != profile.subject_id)
            throw InvariantViolation("recording: meta/profile subject mismatch");
        auto check_stream = [](const auto& v, const char* what) {
            std::int64_t prev = -1;
            for (const auto& s : v) {
                if (s.t_ms < 0) throw InvariantViolation(std::string(what) + ": negative t_ms");
                if (s.t_ms <= prev)
                    throw InvariantViolation(std::string(what) + ": t_ms not strictly increasing");
                prev = s.t_ms;
            }
        };
        check_stream(ecg, "ecg");
        check_stream(accel, "accel");
        check_stream(events, "events");
        bool expect_fall = true;
        for (const auto& e : events) {
            bool is_fall = e.signal == Signal::Fall;
            if (is_fall != expect_fall)
                throw InvariantViolation("events: fall/getup signals must alternate");
            expect_fall = !expect_fall;
        }
    }
};

// Number of 5s chunks the transport will emit for a recording whose
// samples end at t_last (inclusive): indexes 0..floor(t_last/5000).
inline std::size_t expected_chunk_count(const Recording& r) {
    if (r.ecg.empty() && r.accel.empty() && r.events.empty()) return 0;
    return static_cast<std::size_t>(r.duration_ms() / kChunkSpanMs) + 1;
}

}  // namespace falldet
