#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace falldet {

using json = nlohmann::json;

// ===== errors =====================================================

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define FALLDET_ERROR(NAME)                  \
    struct NAME : Error {                    \
        using Error::Error;                  \
    }

FALLDET_ERROR(MalformedDocument);
FALLDET_ERROR(InvariantViolation);
FALLDET_ERROR(OutOfOrderSample);
FALLDET_ERROR(InfeasibleRatio);
FALLDET_ERROR(FinalFlushFailed);
FALLDET_ERROR(Forbidden);
FALLDET_ERROR(DuplicateMeta);
FALLDET_ERROR(StoreFailure);
FALLDET_ERROR(MissingMeta);
FALLDET_ERROR(EmptyRecording);
FALLDET_ERROR(UnpairedSignal);
FALLDET_ERROR(TooShort);
FALLDET_ERROR(TooFewSamples);
FALLDET_ERROR(SingleClassTraining);
FALLDET_ERROR(NonFiniteLoss);
FALLDET_ERROR(ShapeMismatch);
FALLDET_ERROR(MalformedModelFile);
FALLDET_ERROR(EmptyInput);
FALLDET_ERROR(SingleClass);
FALLDET_ERROR(NoContacts);
FALLDET_ERROR(SinkUnavailable);
FALLDET_ERROR(ConfigError);

#undef FALLDET_ERROR

// Missing chunk keeps the index so callers can report it.
struct MissingChunk : Error {
    std::size_t index;
    explicit MissingChunk(std::size_t idx)
        : Error("missing chunk " + std::to_string(idx)), index(idx) {}
};

// ===== float <-> bytes ============================================
// All bulk float payloads travel as little-endian IEEE-754 f32.

inline void put_f32_le(std::string& out, float v) {
    auto u = std::bit_cast<std::uint32_t>(v);
    out.push_back(static_cast<char>(u & 0xff));
    out.push_back(static_cast<char>((u >> 8) & 0xff));
    out.push_back(static_cast<char>((u >> 16) & 0xff));
    out.push_back(static_cast<char>((u >> 24) & 0xff));
}

inline float get_f32_le(const unsigned char* p) {
    std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                      (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(u);
}

inline std::string f32s_to_bytes(const std::vector<float>& vs) {
    std::string out;
    out.reserve(vs.size() * 4);
    for (float v : vs) put_f32_le(out, v);
    return out;
}

inline std::vector<float> bytes_to_f32s(const std::string& bytes) {
    if (bytes.size() % 4 != 0)
        throw MalformedDocument("f32 payload length not a multiple of 4");
    std::vector<float> out(bytes.size() / 4);
    auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_f32_le(p + i * 4);
    return out;
}

// ===== base64 =====================================================

namespace b64detail {
inline constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline int decode_char(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}
}  // namespace b64detail

inline std::string base64_encode(const std::string& in) {
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    auto* p = reinterpret_cast<const unsigned char*>(in.data());
    for (; i + 3 <= in.size(); i += 3) {
        std::uint32_t v = (p[i] << 16) | (p[i + 1] << 8) | p[i + 2];
        out.push_back(b64detail::kAlphabet[(v >> 18) & 63]);
        out.push_back(b64detail::kAlphabet[(v >> 12) & 63]);
        out.push_back(b64detail::kAlphabet[(v >> 6) & 63]);
        out.push_back(b64detail::kAlphabet[v & 63]);
    }
    std::size_t rest = in.size() - i;
    if (rest == 1) {
        std::uint32_t v = p[i] << 16;
        out.push_back(b64detail::kAlphabet[(v >> 18) & 63]);
        out.push_back(b64detail::kAlphabet[(v >> 12) & 63]);
        out += "==";
    } else if (rest == 2) {
        std::uint32_t v = (p[i] << 16) | (p[i + 1] << 8);
        out.push_back(b64detail::kAlphabet[(v >> 18) & 63]);
        out.push_back(b64detail::kAlphabet[(v >> 12) & 63]);
        out.push_back(b64detail::kAlphabet[(v >> 6) & 63]);
        out += "=";
    }
    return out;
}

inline std::string base64_decode(const std::string& in) {
    if (in.size() % 4 != 0) throw MalformedDocument("base64 length not a multiple of 4");
    std::string out;
    out.reserve(in.size() / 4 * 3);
    for (std::size_t i = 0; i < in.size(); i += 4) {
        int pad = 0;
        std::uint32_t v = 0;
        for (int j = 0; j < 4; ++j) {
            char c = in[i + j];
            if (c == '=') {
                if (i + 4 != in.size() || j < 2) throw MalformedDocument("stray base64 padding");
                ++pad;
                v <<= 6;
                continue;
            }
            if (pad > 0) throw MalformedDocument("base64 data after padding");
            int d = b64detail::decode_char(c);
            if (d < 0) throw MalformedDocument("invalid base64 character");
            v = (v << 6) | static_cast<std::uint32_t>(d);
        }
        out.push_back(static_cast<char>((v >> 16) & 0xff));
        if (pad < 2) out.push_back(static_cast<char>((v >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<char>(v & 0xff));
    }
    return out;
}

inline std::string encode_f32_b64(const std::vector<float>& vs) {
    return base64_encode(f32s_to_bytes(vs));
}

inline std::vector<float> decode_f32_b64(const std::string& s, std::size_t expect_count) {
    auto vs = bytes_to_f32s(base64_decode(s));
    if (vs.size() != expect_count)
        throw MalformedDocument("f32 payload has " + std::to_string(vs.size()) +
                                " values, expected " + std::to_string(expect_count));
    return vs;
}

// ===== deterministic random =======================================
// mt19937_64 is fully specified by the standard; the distribution
// helpers below avoid the implementation-defined std distributions
// so streams are identical across platforms.

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t bits() { return eng_(); }

    // in [0, 1)
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // in [0, n)
    std::uint64_t below(std::uint64_t n) { return eng_() % n; }

    // Box-Muller, one fresh pair of draws per call.
    double normal(double mu, double sigma) {
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        return mu + sigma * z;
    }

    double truncated_normal_nonneg(double mu, double sigma) {
        for (;;) {
            double v = normal(mu, sigma);
            if (v >= 0.0) return v;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

// Derives an independent stream for sub-task `k` of a seeded run.
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t k) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace falldet
