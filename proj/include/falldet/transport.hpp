#pragma once

// Chunked recording transmission: 5s circular-buffer chunker, framed JSON
// wire protocol, allowlisted ingest server over a JSONL+files store, fault
// injection, client post queue with retry, and meta-driven reassembly.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "falldet/common.hpp"
#include "falldet/domain.hpp"
#include "falldet/recording_codec.hpp"

namespace falldet::net {

namespace fs = std::filesystem;

// ===== chunker ====================================================
// Splits a merged sample/event stream into 5s chunks. Chunk k is emitted
// exactly when the stream time reaches (k+1)*5000; a gap spanning whole
// chunks emits them empty so indexes stay contiguous. flush() emits the
// final partial chunk and ends the stream.

class Chunker {
  public:
    explicit Chunker(std::string recording_id) : rec_id_(std::move(recording_id)) {}

    std::vector<Chunk> push(const EcgSample& s) {
        return push_item(s.t_ms, last_ecg_, "ecg", [&](Chunk& c) { c.ecg.push_back(s); });
    }
    std::vector<Chunk> push(const AccelSample& s) {
        return push_item(s.t_ms, last_accel_, "accel", [&](Chunk& c) { c.accel.push_back(s); });
    }
    std::vector<Chunk> push(const LabelEvent& e) {
        return push_item(e.t_ms, last_event_, "event", [&](Chunk& c) { c.events.push_back(e); });
    }

    std::vector<Chunk> flush() {
        if (flushed_) return {};
        flushed_ = true;
        if (max_t_ < 0) return {};
        return emit_below(static_cast<std::size_t>(max_t_ / kChunkSpanMs) + 1);
    }

  private:
    template <typename Append>
    std::vector<Chunk> push_item(std::int64_t t, std::int64_t& last_t, const char* stream,
                                 Append append) {
        if (flushed_) throw InvariantViolation("chunker: push after flush");
        if (t < 0) throw OutOfOrderSample(std::string(stream) + ": negative t_ms");
        if (t <= last_t)
            throw OutOfOrderSample(std::string(stream) + ": t_ms " + std::to_string(t) +
                                   " not after " + std::to_string(last_t));
        auto k = static_cast<std::size_t>(t / kChunkSpanMs);
        if (k < next_emit_)
            throw OutOfOrderSample(std::string(stream) + ": chunk " + std::to_string(k) +
                                   " already emitted");
        auto out = emit_below(k);
        auto it = open_.find(k);
        if (it == open_.end()) it = open_.emplace(k, Chunk{rec_id_, k, {}, {}, {}}).first;
        append(it->second);
        last_t = t;
        max_t_ = std::max(max_t_, t);
        return out;
    }

    std::vector<Chunk> emit_below(std::size_t k) {
        std::vector<Chunk> out;
        for (; next_emit_ < k; ++next_emit_) {
            auto it = open_.find(next_emit_);
            if (it == open_.end()) {
                out.push_back(Chunk{rec_id_, next_emit_, {}, {}, {}});
            } else {
                out.push_back(std::move(it->second));
                open_.erase(it);
            }
        }
        return out;
    }

    std::string rec_id_;
    std::size_t next_emit_ = 0;
    std::int64_t max_t_ = -1;
    std::int64_t last_ecg_ = -1, last_accel_ = -1, last_event_ = -1;
    std::map<std::size_t, Chunk> open_;
    bool flushed_ = false;
};

// Merge order across streams at equal t: ecg, accel, event.
template <typename OnItem>
inline void for_each_merged(const Recording& r, OnItem on_item) {
    std::size_t ie = 0, ia = 0, iv = 0;
    while (ie < r.ecg.size() || ia < r.accel.size() || iv < r.events.size()) {
        std::int64_t te = ie < r.ecg.size() ? r.ecg[ie].t_ms : std::numeric_limits<std::int64_t>::max();
        std::int64_t ta = ia < r.accel.size() ? r.accel[ia].t_ms : std::numeric_limits<std::int64_t>::max();
        std::int64_t tv = iv < r.events.size() ? r.events[iv].t_ms : std::numeric_limits<std::int64_t>::max();
        if (te <= ta && te <= tv) {
            on_item(r.ecg[ie++]);
        } else if (ta <= tv) {
            on_item(r.accel[ia++]);
        } else {
            on_item(r.events[iv++]);
        }
    }
}

inline std::vector<Chunk> chunk_recording(const Recording& r) {
    Chunker ck(r.meta.recording_id);
    std::vector<Chunk> out;
    auto take = [&](std::vector<Chunk> v) {
        for (auto& c : v) out.push_back(std::move(c));
    };
    for_each_merged(r, [&](const auto& item) { take(ck.push(item)); });
    take(ck.flush());
    return out;
}

// ===== chunk document =============================================

inline json chunk_to_json(const Chunk& c) {
    json ecg = json::array();
    for (const auto& s : c.ecg) ecg.push_back({{"t", s.t_ms}, {"uv", encode_f32_b64({s.uv})}});
    json accel = json::array();
    for (const auto& s : c.accel)
        accel.push_back({{"t", s.t_ms}, {"xyz", encode_f32_b64({s.x_mg, s.y_mg, s.z_mg})}});
    json events = json::array();
    for (const auto& e : c.events)
        events.push_back({{"t", e.t_ms}, {"signal", signal_name(e.signal)}});
    return {{"recording_id", c.recording_id},
            {"index", c.index},
            {"ecg", std::move(ecg)},
            {"accel", std::move(accel)},
            {"events", std::move(events)}};
}

inline Chunk chunk_from_json(const json& j) {
    try {
        Chunk c;
        c.recording_id = j.at("recording_id").get<std::string>();
        c.index = j.at("index").get<std::size_t>();
        for (const auto& e : j.at("ecg")) {
            auto vs = decode_f32_b64(e.at("uv").get<std::string>(), 1);
            c.ecg.push_back({e.at("t").get<std::int64_t>(), vs[0]});
        }
        for (const auto& e : j.at("accel")) {
            auto vs = decode_f32_b64(e.at("xyz").get<std::string>(), 3);
            c.accel.push_back({e.at("t").get<std::int64_t>(), vs[0], vs[1], vs[2]});
        }
        for (const auto& e : j.at("events"))
            c.events.push_back(
                {e.at("t").get<std::int64_t>(), signal_from_name(e.at("signal").get<std::string>())});
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw MalformedDocument(std::string("chunk document: ") + e.what());
    }
}

// ===== wire protocol ==============================================
// 4-byte big-endian length prefix + JSON body per message.

enum class MsgType { Ping, PostUser, PostChunk, PostMeta, GetRecording };

inline const char* msg_type_name(MsgType t) {
    switch (t) {
        case MsgType::Ping: return "ping";
        case MsgType::PostUser: return "post_user";
        case MsgType::PostChunk: return "post_chunk";
        case MsgType::PostMeta: return "post_meta";
        case MsgType::GetRecording: return "get_recording";
    }
    throw InvariantViolation("unknown message type");
}

inline MsgType msg_type_from_name(const std::string& s) {
    if (s == "ping") return MsgType::Ping;
    if (s == "post_user") return MsgType::PostUser;
    if (s == "post_chunk") return MsgType::PostChunk;
    if (s == "post_meta") return MsgType::PostMeta;
    if (s == "get_recording") return MsgType::GetRecording;
    throw MalformedDocument("unknown message type: " + s);
}

struct WireMessage {
    MsgType type = MsgType::Ping;
    std::uint64_t request_id = 0;
    json payload = json::object();
};

struct WireResponse {
    std::uint64_t request_id = 0;
    std::string status;  // "ok" | "forbidden" | "error"
    json payload = json::object();
    std::string error;
    std::string error_kind;       // machine-readable, e.g. "missing_chunk"
    std::int64_t chunk_index = -1;  // set when error_kind == "missing_chunk"
};

inline json wire_message_to_json(const WireMessage& m) {
    return {{"type", msg_type_name(m.type)}, {"request_id", m.request_id}, {"payload", m.payload}};
}

inline WireMessage wire_message_from_json(const json& j) {
    try {
        WireMessage m;
        m.type = msg_type_from_name(j.at("type").get<std::string>());
        m.request_id = j.at("request_id").get<std::uint64_t>();
        m.payload = j.value("payload", json::object());
        return m;
    } catch (const json::exception& e) {
        throw MalformedDocument(std::string("wire message: ") + e.what());
    }
}

inline json wire_response_to_json(const WireResponse& r) {
    return {{"request_id", r.request_id}, {"status", r.status},     {"payload", r.payload},
            {"error", r.error},           {"error_kind", r.error_kind}, {"chunk_index", r.chunk_index}};
}

inline WireResponse wire_response_from_json(const json& j) {
    try {
        WireResponse r;
        r.request_id = j.at("request_id").get<std::uint64_t>();
        r.status = j.at("status").get<std::string>();
        r.payload = j.value("payload", json::object());
        r.error = j.value("error", std::string());
        r.error_kind = j.value("error_kind", std::string());
        r.chunk_index = j.value("chunk_index", std::int64_t{-1});
        return r;
    } catch (const json::exception& e) {
        throw MalformedDocument(std::string("wire response: ") + e.what());
    }
}

inline void append_frame(std::string& buf, const std::string& payload) {
    auto n = static_cast<std::uint32_t>(payload.size());
    buf.push_back(static_cast<char>((n >> 24) & 0xff));
    buf.push_back(static_cast<char>((n >> 16) & 0xff));
    buf.push_back(static_cast<char>((n >> 8) & 0xff));
    buf.push_back(static_cast<char>(n & 0xff));
    buf.append(payload);
}

// Returns the next complete frame starting at pos, advancing pos past it;
// nullopt (pos untouched) when the buffer holds only a partial frame.
inline std::optional<std::string> read_frame(const std::string& buf, std::size_t& pos) {
    if (buf.size() - pos < 4) return std::nullopt;
    auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])); };
    std::uint32_t n = (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
    if (n > (1u << 26)) throw MalformedDocument("frame too large: " + std::to_string(n));
    if (buf.size() - pos < 4 + static_cast<std::size_t>(n)) return std::nullopt;
    std::string out = buf.substr(pos + 4, n);
    pos += 4 + static_cast<std::size_t>(n);
    return out;
}

// ===== store ======================================================
// users.jsonl and metas.jsonl hold one document per line; chunks/ holds
// one JSON document per chunk, named <escaped recording_id>-<index>.json.

namespace detail {

inline bool keep_plain(char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '.';
}

inline std::string escape_component(const std::string& s) {
    static constexpr char hex[] = "0123456789ABCDEF";
    std::string out;
    for (char c : s) {
        if (keep_plain(c)) {
            out.push_back(c);
        } else {
            out.push_back('%');
            out.push_back(hex[(static_cast<unsigned char>(c) >> 4) & 0xf]);
            out.push_back(hex[static_cast<unsigned char>(c) & 0xf]);
        }
    }
    return out;
}

inline std::string unescape_component(const std::string& s) {
    auto hexval = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '%') {
            out.push_back(s[i]);
            continue;
        }
        if (i + 2 >= s.size()) throw MalformedDocument("bad escape in chunk filename: " + s);
        int hi = hexval(s[i + 1]), lo = hexval(s[i + 2]);
        if (hi < 0 || lo < 0) throw MalformedDocument("bad escape in chunk filename: " + s);
        out.push_back(static_cast<char>((hi << 4) | lo));
        i += 2;
    }
    return out;
}

}  // namespace detail

class Store {
  public:
    explicit Store(fs::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        fs::create_directories(dir_ / "chunks", ec);
        if (ec) throw StoreFailure("cannot create store at " + dir_.string() + ": " + ec.message());
        load_jsonl(dir_ / "users.jsonl", [&](const json& j) {
            auto p = profile_from_json(j);
            users_.emplace(p.subject_id, std::move(p));
        });
        load_jsonl(dir_ / "metas.jsonl", [&](const json& j) {
            auto m = meta_from_json(j);
            metas_.emplace(m.recording_id, std::move(m));
        });
        for (const auto& entry : fs::directory_iterator(dir_ / "chunks"))
            chunk_keys_.insert(parse_chunk_filename(entry.path().filename().string()));
    }

    // True when the profile was new; idempotent re-posts return false.
    bool put_user(const UserProfile& p) {
        std::lock_guard lock(mu_);
        auto it = users_.find(p.subject_id);
        if (it != users_.end()) {
            if (!(it->second == p))
                throw InvariantViolation("user profile conflict for " + p.subject_id);
            return false;
        }
        append_line(dir_ / "users.jsonl", profile_to_json(p).dump());
        users_.emplace(p.subject_id, p);
        return true;
    }

    bool put_chunk(const Chunk& c) {
        std::lock_guard lock(mu_);
        std::string doc = chunk_to_json(c).dump();
        auto key = std::make_pair(c.recording_id, c.index);
        auto path = chunk_path(c.recording_id, c.index);
        if (chunk_keys_.count(key)) {
            if (read_file(path) != doc + "\n")
                throw InvariantViolation("chunk content conflict for " + c.recording_id + "/" +
                                         std::to_string(c.index));
            return false;
        }
        auto tmp = path;
        tmp += ".tmp";
        write_file(tmp, doc + "\n");
        std::error_code ec;
        fs::rename(tmp, path, ec);
        if (ec) throw StoreFailure("cannot store chunk: " + ec.message());
        chunk_keys_.insert(std::move(key));
        return true;
    }

    void put_meta(const RecordingMeta& m) {
        std::lock_guard lock(mu_);
        auto it = metas_.find(m.recording_id);
        if (it != metas_.end()) {
            if (!(it->second == m)) throw DuplicateMeta("meta already stored for " + m.recording_id);
            return;
        }
        append_line(dir_ / "metas.jsonl", meta_to_json(m).dump());
        metas_.emplace(m.recording_id, m);
    }

    std::optional<UserProfile> user(const std::string& subject_id) const {
        std::lock_guard lock(mu_);
        auto it = users_.find(subject_id);
        if (it == users_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<RecordingMeta> meta(const std::string& recording_id) const {
        std::lock_guard lock(mu_);
        auto it = metas_.find(recording_id);
        if (it == metas_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<Chunk> chunk(const std::string& recording_id, std::size_t index) const {
        std::lock_guard lock(mu_);
        if (!chunk_keys_.count({recording_id, index})) return std::nullopt;
        auto doc = read_file(chunk_path(recording_id, index));
        return chunk_from_json(json::parse(doc));
    }

    std::vector<std::string> meta_ids() const {
        std::lock_guard lock(mu_);
        std::vector<std::string> out;
        out.reserve(metas_.size());
        for (const auto& [id, m] : metas_) out.push_back(id);
        return out;
    }

    // Chunks whose recording never received a meta (cancelled uploads).
    std::size_t orphan_count() const {
        std::lock_guard lock(mu_);
        std::size_t n = 0;
        for (const auto& [id, idx] : chunk_keys_)
            if (!metas_.count(id)) ++n;
        return n;
    }

  private:
    template <typename OnDoc>
    void load_jsonl(const fs::path& path, OnDoc on_doc) {
        std::ifstream in(path);
        if (!in.is_open()) return;  // not created yet
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                on_doc(json::parse(line));
            } catch (const std::exception& e) {
                throw MalformedDocument(path.string() + ":" + std::to_string(lineno) + ": " +
                                        e.what());
            }
        }
    }

    static void append_line(const fs::path& path, const std::string& line) {
        std::ofstream out(path, std::ios::app | std::ios::binary);
        if (!out.is_open()) throw StoreFailure("cannot open " + path.string());
        out << line << '\n';
        out.flush();
        if (!out.good()) throw StoreFailure("write failed on " + path.string());
    }

    static void write_file(const fs::path& path, const std::string& content) {
        std::ofstream out(path, std::ios::trunc | std::ios::binary);
        if (!out.is_open()) throw StoreFailure("cannot open " + path.string());
        out << content;
        out.flush();
        if (!out.good()) throw StoreFailure("write failed on " + path.string());
    }

    static std::string read_file(const fs::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in.is_open()) throw StoreFailure("cannot open " + path.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    fs::path chunk_path(const std::string& recording_id, std::size_t index) const {
        return dir_ / "chunks" /
               (detail::escape_component(recording_id) + "-" + std::to_string(index) + ".json");
    }

    static std::pair<std::string, std::size_t> parse_chunk_filename(const std::string& name) {
        auto fail = [&] { throw MalformedDocument("unrecognized chunk file: " + name); };
        const std::string suffix = ".json";
        if (name.size() <= suffix.size() || name.substr(name.size() - suffix.size()) != suffix)
            fail();
        std::string stem = name.substr(0, name.size() - suffix.size());
        auto dash = stem.rfind('-');
        if (dash == std::string::npos || dash + 1 == stem.size()) fail();
        std::size_t index = 0;
        for (char c : stem.substr(dash + 1)) {
            if (c < '0' || c > '9') fail();
            index = index * 10 + static_cast<std::size_t>(c - '0');
        }
        return {detail::unescape_component(stem.substr(0, dash)), index};
    }

    fs::path dir_;
    mutable std::mutex mu_;
    std::map<std::string, UserProfile> users_;
    std::map<std::string, RecordingMeta> metas_;
    std::set<std::pair<std::string, std::size_t>> chunk_keys_;
};

// ===== reassembly =================================================

inline Recording reassemble(const Store& store, const std::string& recording_id) {
    auto meta = store.meta(recording_id);
    if (!meta) throw MissingMeta("no meta stored for recording " + recording_id);
    auto profile = store.user(meta->subject_id);
    if (!profile) throw StoreFailure("no profile stored for subject " + meta->subject_id);
    Recording r;
    r.meta = *meta;
    r.profile = *profile;
    for (std::size_t idx : meta->chunk_indexes) {
        auto c = store.chunk(recording_id, idx);
        if (!c) throw MissingChunk(idx);
        r.ecg.insert(r.ecg.end(), c->ecg.begin(), c->ecg.end());
        r.accel.insert(r.accel.end(), c->accel.begin(), c->accel.end());
        r.events.insert(r.events.end(), c->events.begin(), c->events.end());
    }
    r.validate();
    return r;
}

// Saved recordings only; orphan chunks have no meta and never appear.
inline std::vector<std::string> list_recordings(const Store& store) { return store.meta_ids(); }

// ===== server =====================================================

struct ServerConfig {
    std::vector<std::string> allowlist;
    fs::path store_dir;
};

class Server {
  public:
    explicit Server(ServerConfig cfg) : cfg_(std::move(cfg)), store_(cfg_.store_dir) {}

    WireResponse handle(const WireMessage& msg, const std::string& source_addr) {
        WireResponse resp;
        resp.request_id = msg.request_id;
        // the allowlist verdict precedes any payload parsing
        if (std::find(cfg_.allowlist.begin(), cfg_.allowlist.end(), source_addr) ==
            cfg_.allowlist.end()) {
            resp.status = "forbidden";
            resp.error = "source not allowlisted: " + source_addr;
            return resp;
        }
        try {
            dispatch(msg, resp);
            resp.status = "ok";
        } catch (const MissingChunk& e) {
            set_error(resp, "missing_chunk", e.what());
            resp.chunk_index = static_cast<std::int64_t>(e.index);
        } catch (const MissingMeta& e) {
            set_error(resp, "missing_meta", e.what());
        } catch (const DuplicateMeta& e) {
            set_error(resp, "duplicate_meta", e.what());
        } catch (const MalformedDocument& e) {
            set_error(resp, "malformed", e.what());
        } catch (const json::exception& e) {
            set_error(resp, "malformed", e.what());
        } catch (const std::exception& e) {
            set_error(resp, "error", e.what());
        }
        return resp;
    }

    Store& store() { return store_; }
    const Store& store() const { return store_; }

  private:
    void dispatch(const WireMessage& msg, WireResponse& resp) {
        switch (msg.type) {
            case MsgType::Ping:
                resp.payload = {{"pong", true}};
                return;
            case MsgType::PostUser: {
                auto p = profile_from_json(msg.payload);
                p.validate();
                store_.put_user(p);
                return;
            }
            case MsgType::PostChunk: {
                auto c = chunk_from_json(msg.payload);
                store_.put_chunk(c);
                return;
            }
            case MsgType::PostMeta: {
                auto m = meta_from_json(msg.payload);
                m.validate();
                store_.put_meta(m);
                return;
            }
            case MsgType::GetRecording: {
                auto id = msg.payload.at("recording_id").get<std::string>();
                resp.payload = {{"document", encode_recording(reassemble(store_, id))}};
                return;
            }
        }
        throw MalformedDocument("unhandled message type");
    }

    static void set_error(WireResponse& resp, const char* kind, const char* what) {
        resp.status = "error";
        resp.error_kind = kind;
        resp.error = what;
    }

    ServerConfig cfg_;
    Store store_;
};

// ===== channels ===================================================
// A channel performs one request/response round trip. nullopt models a
// timeout: the client cannot tell whether the request was delivered.

class Channel {
  public:
    virtual ~Channel() = default;
    virtual std::optional<WireResponse> roundtrip(const WireMessage& msg) = 0;
};

class DirectChannel final : public Channel {
  public:
    DirectChannel(Server& server, std::string source_addr)
        : server_(server), addr_(std::move(source_addr)) {}

    std::optional<WireResponse> roundtrip(const WireMessage& msg) override {
        return server_.handle(msg, addr_);
    }

  private:
    Server& server_;
    std::string addr_;
};

struct FaultSpec {
    double drop_prob = 0.0;     // applied independently to request and response
    double reorder_prob = 0.0;  // request held and delivered after the next one
    std::uint64_t seed = 0;
};

class FaultyChannel final : public Channel {
  public:
    FaultyChannel(Channel& inner, FaultSpec spec) : inner_(inner), spec_(spec), rng_(spec.seed) {}

    std::optional<WireResponse> roundtrip(const WireMessage& msg) override {
        if (rng_.uniform01() < spec_.drop_prob) return std::nullopt;  // request lost
        if (rng_.uniform01() < spec_.reorder_prob) {
            held_.push_back(msg);  // delivered late, after the next request
            return std::nullopt;
        }
        auto resp = inner_.roundtrip(msg);
        for (const auto& h : held_) inner_.roundtrip(h);  // late arrivals, replies long timed out
        held_.clear();
        if (rng_.uniform01() < spec_.drop_prob) return std::nullopt;  // response lost
        return resp;
    }

  private:
    Channel& inner_;
    FaultSpec spec_;
    Rng rng_;
    std::vector<WireMessage> held_;
};

// ===== client session =============================================

enum class Decision { Save, Cancel };
enum class SessionStatus { Saved, Cancelled };

struct SessionOutcome {
    SessionStatus status = SessionStatus::Cancelled;
    std::set<std::size_t> posted_chunks;  // indexes the client saw confirmed
    bool meta_posted = false;
};

// Streams the recording through the chunker, posting chunks as they are
// emitted. A failed post re-enqueues the chunk at the back of the queue.
// Save flushes the queue (bounded rounds) and posts the meta; Cancel stops
// immediately, leaving whatever was posted as orphans.
inline SessionOutcome client_session(const Recording& rec, Channel& channel, Decision decision,
                                     std::size_t flush_rounds = 10) {
    std::uint64_t next_id = 1;
    auto post = [&](MsgType type, json payload) {
        auto resp = channel.roundtrip({type, next_id++, std::move(payload)});
        return resp.has_value() && resp->status == "ok";
    };

    bool user_posted = post(MsgType::PostUser, profile_to_json(rec.profile));

    std::deque<Chunk> queue;
    SessionOutcome outcome;
    auto queue_pass = [&] {
        for (std::size_t n = queue.size(); n > 0; --n) {
            Chunk c = std::move(queue.front());
            queue.pop_front();
            if (post(MsgType::PostChunk, chunk_to_json(c)))
                outcome.posted_chunks.insert(c.index);
            else
                queue.push_back(std::move(c));
        }
    };

    Chunker ck(rec.meta.recording_id);
    for_each_merged(rec, [&](const auto& item) {
        auto emitted = ck.push(item);
        if (emitted.empty()) return;
        for (auto& c : emitted) queue.push_back(std::move(c));
        queue_pass();
    });

    if (decision == Decision::Cancel) {
        outcome.status = SessionStatus::Cancelled;
        return outcome;
    }

    for (auto& c : ck.flush()) queue.push_back(std::move(c));
    for (std::size_t round = 0; round < flush_rounds && !(queue.empty() && user_posted); ++round) {
        if (!user_posted) user_posted = post(MsgType::PostUser, profile_to_json(rec.profile));
        queue_pass();
    }
    if (!queue.empty() || !user_posted)
        throw FinalFlushFailed("final flush incomplete after " + std::to_string(flush_rounds) +
                               " rounds: " + std::to_string(queue.size()) + " chunks pending");

    for (std::size_t round = 0; round < flush_rounds && !outcome.meta_posted; ++round)
        outcome.meta_posted = post(MsgType::PostMeta, meta_to_json(rec.meta));
    if (!outcome.meta_posted)
        throw FinalFlushFailed("meta post failed after " + std::to_string(flush_rounds) +
                               " attempts");

    outcome.status = SessionStatus::Saved;
    return outcome;
}

// Fetches the canonical encoded document and decodes it, surfacing the
// server's typed errors.
inline Recording get_recording(Channel& channel, const std::string& recording_id) {
    auto resp = channel.roundtrip(
        {MsgType::GetRecording, 0, json{{"recording_id", recording_id}}});
    if (!resp) throw StoreFailure("get_recording: no response");
    if (resp->status == "forbidden") throw Forbidden(resp->error);
    if (resp->status != "ok") {
        if (resp->error_kind == "missing_meta") throw MissingMeta(resp->error);
        if (resp->error_kind == "missing_chunk")
            throw MissingChunk(static_cast<std::size_t>(resp->chunk_index));
        throw StoreFailure(resp->error);
    }
    return decode_recording(resp->payload.at("document").get<std::string>());
}

}  // namespace falldet::net
