#pragma once

#include <sstream>
#include <string>

#include "falldet/domain.hpp"

namespace falldet {

// Recording document: UTF-8 JSON lines.
//   line 1          {"meta":{...},"profile":{...}}
//   following lines {"kind":"ecg","t":<ms>,"uv":"<b64 f32>"}
//                   {"kind":"accel","t":<ms>,"xyz":"<b64 3xf32>"}
//                   {"kind":"event","t":<ms>,"signal":"fall"|"getup"}
// Sample lines are ordered by (t, ecg<accel<event). decode(encode(r))
// reproduces r bit for bit; float payloads never pass through decimal
// text.

inline json profile_to_json(const UserProfile& p) {
    json contacts = json::array();
    for (const auto& c : p.contacts) contacts.push_back({{"name", c.name}, {"phone", c.phone}});
    return {{"subject_id", p.subject_id},
            {"age", p.age},
            {"height_cm", p.height_cm},
            {"weight_kg", p.weight_kg},
            {"contacts", contacts}};
}

inline UserProfile profile_from_json(const json& j) {
    UserProfile p;
    p.subject_id = j.at("subject_id").get<std::string>();
    p.age = j.at("age").get<int>();
    p.height_cm = j.at("height_cm").get<double>();
    p.weight_kg = j.at("weight_kg").get<double>();
    for (const auto& c : j.at("contacts"))
        p.contacts.push_back({c.at("name").get<std::string>(), c.at("phone").get<std::string>()});
    return p;
}

inline json meta_to_json(const RecordingMeta& m) {
    return {{"recording_id", m.recording_id},
            {"subject_id", m.subject_id},
            {"chunk_indexes", m.chunk_indexes},
            {"created_at_ms", m.created_at_ms}};
}

inline RecordingMeta meta_from_json(const json& j) {
    RecordingMeta m;
    m.recording_id = j.at("recording_id").get<std::string>();
    m.subject_id = j.at("subject_id").get<std::string>();
    m.chunk_indexes = j.at("chunk_indexes").get<std::vector<std::size_t>>();
    m.created_at_ms = j.at("created_at_ms").get<std::int64_t>();
    return m;
}

inline std::string encode_recording(const Recording& r) {
    std::string out;
    json head = {{"meta", meta_to_json(r.meta)}, {"profile", profile_to_json(r.profile)}};
    out += head.dump();
    out += '\n';

    std::size_t ie = 0, ia = 0, iv = 0;
    auto emit_ecg = [&](const EcgSample& s) {
        json line = {{"kind", "ecg"}, {"t", s.t_ms}, {"uv", encode_f32_b64({s.uv})}};
        out += line.dump();
        out += '\n';
    };
    auto emit_accel = [&](const AccelSample& s) {
        json line = {{"kind", "accel"},
                     {"t", s.t_ms},
                     {"xyz", encode_f32_b64({s.x_mg, s.y_mg, s.z_mg})}};
        out += line.dump();
        out += '\n';
    };
    auto emit_event = [&](const LabelEvent& e) {
        json line = {{"kind", "event"}, {"t", e.t_ms}, {"signal", signal_name(e.signal)}};
        out += line.dump();
        out += '\n';
    };
    // three-way merge by time; stream rank breaks ties
    while (ie < r.ecg.size() || ia < r.accel.size() || iv < r.events.size()) {
        std::int64_t te = ie < r.ecg.size() ? r.ecg[ie].t_ms : INT64_MAX;
        std::int64_t ta = ia < r.accel.size() ? r.accel[ia].t_ms : INT64_MAX;
        std::int64_t tv = iv < r.events.size() ? r.events[iv].t_ms : INT64_MAX;
        if (te <= ta && te <= tv) {
            emit_ecg(r.ecg[ie++]);
        } else if (ta <= tv) {
            emit_accel(r.accel[ia++]);
        } else {
            emit_event(r.events[iv++]);
        }
    }
    return out;
}

inline Recording decode_recording(const std::string& doc) {
    std::istringstream in(doc);
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& why) -> MalformedDocument {
        return MalformedDocument("line " + std::to_string(line_no) + ": " + why);
    };

    Recording r;
    if (!std::getline(in, line)) throw MalformedDocument("line 1: empty document");
    line_no = 1;
    try {
        json head = json::parse(line);
        r.meta = meta_from_json(head.at("meta"));
        r.profile = profile_from_json(head.at("profile"));
    } catch (const json::exception& e) {
        throw fail(e.what());
    }

    std::int64_t prev_ecg = -1, prev_accel = -1, prev_event = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        std::string kind;
        std::int64_t t;
        try {
            j = json::parse(line);
            kind = j.at("kind").get<std::string>();
            t = j.at("t").get<std::int64_t>();
        } catch (const json::exception& e) {
            throw fail(e.what());
        }
        if (t < 0) throw InvariantViolation("line " + std::to_string(line_no) + ": negative t");
        // pull the payload fields under a guard so base64/field errors
        // carry the offending line number
        auto guarded = [&](auto&& fn) {
            try {
                fn();
            } catch (const json::exception& e) {
                throw fail(e.what());
            } catch (const MalformedDocument& e) {
                throw fail(e.what());
            }
        };
        if (kind == "ecg") {
            if (t <= prev_ecg)
                throw InvariantViolation("line " + std::to_string(line_no) +
                                         ": ecg t not strictly increasing");
            prev_ecg = t;
            guarded([&] {
                auto vs = decode_f32_b64(j.at("uv").get<std::string>(), 1);
                r.ecg.push_back({t, vs[0]});
            });
        } else if (kind == "accel") {
            if (t <= prev_accel)
                throw InvariantViolation("line " + std::to_string(line_no) +
                                         ": accel t not strictly increasing");
            prev_accel = t;
            guarded([&] {
                auto vs = decode_f32_b64(j.at("xyz").get<std::string>(), 3);
                r.accel.push_back({t, vs[0], vs[1], vs[2]});
            });
        } else if (kind == "event") {
            if (t <= prev_event)
                throw InvariantViolation("line " + std::to_string(line_no) +
                                         ": event t not strictly increasing");
            prev_event = t;
            guarded([&] {
                r.events.push_back({t, signal_from_name(j.at("signal").get<std::string>())});
            });
        } else {
            throw fail("unknown kind '" + kind + "'");
        }
    }
    try {
        r.validate();
    } catch (const InvariantViolation& e) {
        throw InvariantViolation(std::string("document invalid: ") + e.what());
    }
    return r;
}

}  // namespace falldet
