#pragma once

// Real-time inference runtime: 100ms interval ingestion into a ring
// buffer, live scaling and scoring through the exact offline code path,
// refractory debouncing, and the notification/escalation state machine.
// All timing comes from injected timestamps; nothing reads a wall clock.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "falldet/common.hpp"
#include "falldet/models.hpp"
#include "falldet/preprocess.hpp"

namespace falldet::rt {

inline constexpr std::int64_t kDefaultRefractoryMs = 10000;
inline constexpr std::int64_t kDefaultEscalationMs = 60000;

struct GeoLocation {
    double latitude = 0.0;
    double longitude = 0.0;
    std::string postal_address;
};

struct DetectorConfig {
    std::size_t w = 10;
    double tau = 0.5;
    std::int64_t refractory_ms = kDefaultRefractoryMs;
    std::int64_t escalation_timeout_ms = kDefaultEscalationMs;
    GeoLocation location;

    void validate() const {
        if (w < 1) throw ConfigError("w must be >= 1");
        if (!std::isfinite(tau)) throw ConfigError("tau must be finite");
        if (refractory_ms <= 0) throw ConfigError("refractory_ms must be positive");
        if (escalation_timeout_ms <= 0) throw ConfigError("escalation_timeout_ms must be positive");
    }
};

struct FallEvent {
    std::uint64_t event_id = 0;
    std::int64_t t_ms = 0;
    double score = 0.0;
};

// ===== runtime ====================================================

class Runtime {
public:
    Runtime(ml::TrainedModel model, prep::ScalerParams scaler, DetectorConfig cfg)
        : model_(std::move(model)), scaler_(std::move(scaler)), cfg_(std::move(cfg)) {
        cfg_.validate();
        if (model_.d != cfg_.w * kFeaturesPerInterval)
            throw ShapeMismatch("model expects " + std::to_string(model_.d) +
                                " features, config w gives " +
                                std::to_string(cfg_.w * kFeaturesPerInterval));
        ring_.resize(cfg_.w);
        scratch_.resize(cfg_.w * kFeaturesPerInterval);
    }

    // One 100ms interval row. Scores once the ring holds w intervals;
    // emits an event iff score >= tau and the refractory period is over.
    std::optional<FallEvent> on_interval(const prep::IntervalRow& row) {
        ring_[head_] = row;
        head_ = (head_ + 1) % cfg_.w;
        ++seen_;
        const std::int64_t now = static_cast<std::int64_t>(seen_) * kIntervalMs;
        if (seen_ < cfg_.w) return std::nullopt;

        for (std::size_t j = 0; j < cfg_.w; ++j) {
            const auto& r = ring_[(head_ + j) % cfg_.w];
            std::copy(r.begin(), r.end(), scratch_.begin() + j * kFeaturesPerInterval);
        }
        prep::apply_scaler(scaler_, scratch_);
        double score = ml::score_sample(model_, scratch_);
        scores_.push_back(score);

        if (score >= cfg_.tau &&
            (last_event_t_ < 0 || now - last_event_t_ >= cfg_.refractory_ms)) {
            last_event_t_ = now;
            return FallEvent{++event_seq_, now, score};
        }
        return std::nullopt;
    }

    const std::vector<double>& scores() const { return scores_; }
    const DetectorConfig& config() const { return cfg_; }
    std::int64_t now_ms() const { return static_cast<std::int64_t>(seen_) * kIntervalMs; }

private:
    ml::TrainedModel model_;
    prep::ScalerParams scaler_;
    DetectorConfig cfg_;
    std::vector<prep::IntervalRow> ring_;
    std::vector<float> scratch_;
    std::size_t head_ = 0;
    std::size_t seen_ = 0;
    std::vector<double> scores_;
    std::int64_t last_event_t_ = -1;
    std::uint64_t event_seq_ = 0;
};

// ===== escalation state machine ===================================

enum class Phase { Idle, FallDetected, Escalated };
enum class InputKind { Fall, UserOk, SendHelp, Tick };
enum class ActionKind { NotifyUser, SendAlerts };

struct FsmState {
    Phase phase = Phase::Idle;
    std::int64_t deadline_ms = 0;
    std::uint64_t pending_event = 0;
};

struct FsmInput {
    InputKind kind = InputKind::Tick;
    std::int64_t t_ms = 0;
    FallEvent event;

    static FsmInput fall(const FallEvent& e) { return {InputKind::Fall, e.t_ms, e}; }
    static FsmInput user_ok(std::int64_t t) { return {InputKind::UserOk, t, {}}; }
    static FsmInput send_help(std::int64_t t) { return {InputKind::SendHelp, t, {}}; }
    static FsmInput tick(std::int64_t t) { return {InputKind::Tick, t, {}}; }
};

struct Action {
    ActionKind kind = ActionKind::NotifyUser;
    std::uint64_t event_id = 0;
    std::int64_t t_ms = 0;
};

struct StepResult {
    FsmState state;
    std::vector<Action> actions;
};

// Pure transition function; every pair not listed is a no-op.
inline StepResult fsm_step(const FsmState& s, const FsmInput& in,
                           std::int64_t escalation_timeout_ms = kDefaultEscalationMs) {
    StepResult r{s, {}};
    switch (s.phase) {
        case Phase::Idle:
            if (in.kind == InputKind::Fall) {
                r.state.phase = Phase::FallDetected;
                r.state.deadline_ms = in.t_ms + escalation_timeout_ms;
                r.state.pending_event = in.event.event_id;
                r.actions.push_back({ActionKind::NotifyUser, in.event.event_id, in.t_ms});
            }
            break;
        case Phase::FallDetected:
            if (in.kind == InputKind::UserOk) {
                r.state = FsmState{};
            } else if (in.kind == InputKind::SendHelp ||
                       (in.kind == InputKind::Tick && in.t_ms >= s.deadline_ms)) {
                r.state.phase = Phase::Escalated;
                r.actions.push_back({ActionKind::SendAlerts, s.pending_event, in.t_ms});
            }
            break;
        case Phase::Escalated:
            if (in.kind == InputKind::Tick) r.state = FsmState{};
            break;
    }
    return r;
}

// ===== alert formatting ===========================================

struct AlertMessage {
    std::string recipient;
    std::string body;
};

inline std::vector<AlertMessage> format_alert(const UserProfile& profile,
                                              const GeoLocation& loc) {
    if (profile.contacts.empty()) throw NoContacts("profile has no emergency contacts");
    char coords[80];
    std::snprintf(coords, sizeof coords, "latitude %.6f, longitude %.6f", loc.latitude,
                  loc.longitude);
    std::vector<AlertMessage> out;
    out.reserve(profile.contacts.size());
    for (const auto& c : profile.contacts) {
        AlertMessage m;
        m.recipient = c.phone;
        m.body = c.name + ": a fall was detected for " + profile.subject_id + " at " + coords +
                 " (" + loc.postal_address + "). Please check on them.";
        out.push_back(std::move(m));
    }
    return out;
}

// ===== alert sink and dispatcher ==================================

struct Delivery {
    std::uint64_t event_id = 0;
    std::string recipient;
    std::string body;
    std::int64_t t_ms = 0;
    bool retried = false;
};

struct AlertSink {
    virtual ~AlertSink() = default;
    virtual void deliver(const Delivery& d) = 0;  // throws SinkUnavailable
};

// Append-only JSONL file, one line per delivery.
class OutboxSink final : public AlertSink {
public:
    explicit OutboxSink(std::filesystem::path path) : path_(std::move(path)) {}

    void deliver(const Delivery& d) override {
        std::ofstream out(path_, std::ios::app);
        if (!out.is_open()) throw SinkUnavailable("cannot open outbox " + path_.string());
        json j = {{"event_id", d.event_id},
                  {"recipient", d.recipient},
                  {"body", d.body},
                  {"t_ms", d.t_ms},
                  {"retried", d.retried}};
        out << j.dump() << '\n';
        out.flush();
        if (!out.good()) throw SinkUnavailable("outbox write failed: " + path_.string());
    }

private:
    std::filesystem::path path_;
};

inline std::vector<Delivery> read_outbox(const std::filesystem::path& path) {
    std::vector<Delivery> out;
    std::ifstream in(path);
    if (!in.is_open()) return out;
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            Delivery d;
            d.event_id = j.at("event_id").get<std::uint64_t>();
            d.recipient = j.at("recipient").get<std::string>();
            d.body = j.at("body").get<std::string>();
            d.t_ms = j.at("t_ms").get<std::int64_t>();
            d.retried = j.at("retried").get<bool>();
            out.push_back(std::move(d));
        } catch (const json::exception& e) {
            throw MalformedDocument("outbox line " + std::to_string(ln) + ": " + e.what());
        }
    }
    return out;
}

// At-least-once dispatch with idempotent (event, recipient) keys. A
// failed delivery is retried once on the next tick, then recorded dead.
class Dispatcher {
public:
    explicit Dispatcher(AlertSink& sink) : sink_(sink) {}

    void send(const std::vector<AlertMessage>& msgs, std::uint64_t event_id, std::int64_t now) {
        for (const auto& m : msgs) {
            if (!attempted_.emplace(event_id, m.recipient).second) continue;
            Delivery d{event_id, m.recipient, m.body, now, false};
            try {
                sink_.deliver(d);
            } catch (const SinkUnavailable&) {
                pending_.push_back(std::move(d));
            }
        }
    }

    void on_tick(std::int64_t now) {
        std::vector<Delivery> batch;
        batch.swap(pending_);
        for (auto& d : batch) {
            d.t_ms = now;
            d.retried = true;
            try {
                sink_.deliver(d);
            } catch (const SinkUnavailable&) {
                dead_.push_back(std::move(d));
            }
        }
    }

    std::size_t pending_count() const { return pending_.size(); }
    const std::vector<Delivery>& dead() const { return dead_; }

private:
    AlertSink& sink_;
    std::set<std::pair<std::uint64_t, std::string>> attempted_;
    std::vector<Delivery> pending_;
    std::vector<Delivery> dead_;
};

// ===== replay driver ==============================================

struct UserResponse {
    std::int64_t t_ms = 0;
    bool help = false;  // false = "I am fine", true = "Send help"
};

struct ReplayResult {
    std::vector<FallEvent> events;
    std::vector<Action> actions;
    FsmState final_state;
};

// Drives the runtime and FSM from a recording's interval stream, then
// keeps ticking the injected clock until the FSM settles and no retry
// is outstanding, so deadlines past the recording's end still fire.
inline ReplayResult run_replay(Runtime& rt, const Recording& rec, const UserProfile& profile,
                               std::vector<UserResponse> responses, Dispatcher& disp) {
    std::stable_sort(responses.begin(), responses.end(),
                     [](const UserResponse& a, const UserResponse& b) { return a.t_ms < b.t_ms; });
    auto intervals = prep::to_intervals(rec);

    ReplayResult res;
    FsmState fsm;
    std::size_t next_resp = 0;

    auto apply = [&](const FsmInput& in) {
        auto r = fsm_step(fsm, in, rt.config().escalation_timeout_ms);
        fsm = r.state;
        for (const auto& a : r.actions) {
            res.actions.push_back(a);
            if (a.kind == ActionKind::SendAlerts)
                disp.send(format_alert(profile, rt.config().location), a.event_id, a.t_ms);
        }
    };
    auto flush_responses = [&](std::int64_t now) {
        while (next_resp < responses.size() && responses[next_resp].t_ms <= now) {
            const auto& u = responses[next_resp++];
            apply(u.help ? FsmInput::send_help(u.t_ms) : FsmInput::user_ok(u.t_ms));
        }
    };

    std::int64_t now = 0;
    for (const auto& row : intervals) {
        now += kIntervalMs;
        if (auto ev = rt.on_interval(row)) {
            res.events.push_back(*ev);
            apply(FsmInput::fall(*ev));
        }
        flush_responses(now);
        apply(FsmInput::tick(now));
        disp.on_tick(now);
    }

    std::int64_t guard = now + rt.config().escalation_timeout_ms + 10 * kIntervalMs;
    if (!responses.empty())
        guard = std::max(guard, responses.back().t_ms + 10 * kIntervalMs);
    while ((fsm.phase != Phase::Idle || disp.pending_count() > 0) && now < guard) {
        now += kIntervalMs;
        flush_responses(now);
        apply(FsmInput::tick(now));
        disp.on_tick(now);
    }

    res.final_state = fsm;
    return res;
}

}  // namespace falldet::rt
