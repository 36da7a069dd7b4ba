#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <vector>

namespace tunembrl {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic xoshiro256++ generator. The standard library engines are
/// kept out of the hot paths so that sampled streams are identical across
/// compilers and stay stable for frozen test values.
class Rng {
public:
    Rng() : Rng(0) {}

    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : state_) {
            x = splitmix64(x);
            w = x;
        }
        has_spare_ = false;
        spare_ = 0.0;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi], inclusive. Uses rejection to stay unbiased.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit range
        const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % span;
        std::uint64_t draw;
        do {
            draw = next_u64();
        } while (draw >= limit);
        return lo + static_cast<std::int64_t>(draw % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller; caches the spare draw.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Fills `out` with standard normals. Bulk variant used by the rollout
    /// paths; draws the uniforms first so the transforms vectorize.
    void fill_normal(float* out, std::size_t n) {
        std::size_t i = 0;
        for (; i + 1 < n; i += 2) {
            const double u1 = 1.0 - uniform();
            const double u2 = uniform();
            const float r = static_cast<float>(std::sqrt(-2.0 * std::log(u1)));
            const float a = static_cast<float>(2.0 * std::numbers::pi * u2);
            out[i] = r * std::cos(a);
            out[i + 1] = r * std::sin(a);
        }
        if (i < n) out[i] = static_cast<float>(normal());
    }

    std::array<std::uint64_t, 4> raw_state() const { return state_; }

    /// Serialized generator state: 4 state words + spare-normal cache.
    std::vector<std::uint8_t> serialize() const {
        std::vector<std::uint8_t> bytes(4 * 8 + 1 + 8);
        std::memcpy(bytes.data(), state_.data(), 32);
        bytes[32] = has_spare_ ? 1 : 0;
        std::memcpy(bytes.data() + 33, &spare_, 8);
        return bytes;
    }

    static Rng deserialize(const std::uint8_t* data, std::size_t size) {
        Rng r(0);
        if (size != 41) return r;
        std::memcpy(r.state_.data(), data, 32);
        r.has_spare_ = data[32] != 0;
        std::memcpy(&r.spare_, data + 33, 8);
        return r;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> state_;
    bool has_spare_;
    double spare_;
};

/// Collision-resistant seed derivation for (master, member, trial) triples.
/// Member streams depend only on their own triple, so runs are resumable and
/// independent of population size.
inline std::uint64_t seed_tree(std::uint64_t master_seed, std::uint64_t member_id,
                               std::uint64_t trial_index) {
    std::uint64_t h = splitmix64(master_seed);
    h = splitmix64(h ^ splitmix64(0x6d656d6265720000ULL ^ member_id));
    h = splitmix64(h ^ splitmix64(0x747269616c000000ULL ^ trial_index));
    return h;
}

}  // namespace tunembrl
