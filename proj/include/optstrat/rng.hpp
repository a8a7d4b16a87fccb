#pragma once

#include <cmath>
#include <cstdint>

// Self-contained random number generation. The standard <random>
// distributions are not byte-stable across standard libraries, so every
// draw that ends up in a serialized artifact goes through this header.

namespace optstrat::rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// xoshiro256** seeded through splitmix64, per the reference recommendation.
class Xoshiro256ss {
  public:
    explicit Xoshiro256ss(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t s_[4];
};

/// Seed for a decorrelated substream, keyed on (master, stream index).
/// Used per stratum and per replication so draws do not depend on the
/// order in which streams are consumed.
inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t sm = master ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    std::uint64_t a = splitmix64(sm);
    return a ^ splitmix64(sm);
}

/// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Xoshiro256ss& gen) {
    return static_cast<double>(gen.next() >> 11) * 0x1.0p-53;
}

/// Unbiased uniform integer in [0, bound), Lemire's multiply-shift method.
inline std::uint64_t uniform_below(Xoshiro256ss& gen, std::uint64_t bound) {
    std::uint64_t x = gen.next();
    __uint128_t m = static_cast<__uint128_t>(x) * bound;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < bound) {
        std::uint64_t threshold = (0 - bound) % bound;
        while (lo < threshold) {
            x = gen.next();
            m = static_cast<__uint128_t>(x) * bound;
            lo = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

/// Standard normal via Box-Muller (cosine branch only, stateless).
inline double normal(Xoshiro256ss& gen) {
    // u1 in (0, 1] so the log is finite.
    double u1 = (static_cast<double>(gen.next() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform01(gen);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace optstrat::rng
