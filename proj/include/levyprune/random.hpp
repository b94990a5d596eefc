#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace levyprune {

/// SplitMix64 finalizer; used as the counter-based hash for all keyed draws.
inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derive a child key from a parent key and a counter.
inline constexpr std::uint64_t derive_key(std::uint64_t parent, std::uint64_t counter) noexcept {
    return mix64(parent ^ mix64(counter + 0x632be59bd9b4e019ULL));
}

inline constexpr std::uint64_t derive_key(std::uint64_t parent, std::uint64_t a, std::uint64_t b) noexcept {
    return derive_key(derive_key(parent, a), b);
}

/// Uniform on the open interval (0,1) from 53 high bits.
inline double uniform_open(std::uint64_t bits) noexcept {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Stream tags; each independent source of randomness in a path gets its own tag.
enum class Stream : std::uint64_t {
    TopIncrement = 1,
    Refine = 2,
    PieceMinimum = 3,
    JumpBridge = 4,
    NodeMark = 5,
    JumpTimes = 6,
    SkeletonGaps = 7,
    InitialMark = 8,
    Tree = 9,
    TreeMarks = 10,
};

inline constexpr std::uint64_t stream_key(std::uint64_t path_key, Stream s) noexcept {
    return derive_key(path_key, static_cast<std::uint64_t>(s));
}

/// Per-path key: chain of (master seed, path index).
inline constexpr std::uint64_t path_key(std::uint64_t seed, std::uint64_t path_index) noexcept {
    return derive_key(mix64(seed), path_index);
}

/// xoshiro256++ engine (UniformRandomBitGenerator), seeded from a 64-bit key via SplitMix64.
class Xoshiro256pp {
public:
    using result_type = std::uint64_t;

    explicit Xoshiro256pp(std::uint64_t key = 0) noexcept { seed(key); }

    void seed(std::uint64_t key) noexcept {
        std::uint64_t z = key;
        for (auto& w : s_) {
            z += 0x9e3779b97f4a7c15ULL;
            std::uint64_t x = z;
            x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
            x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
            w = x ^ (x >> 31);
        }
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    double uniform() noexcept { return uniform_open((*this)()); }
    double exponential() noexcept { return -std::log(uniform()); }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t s_[4]{};
};

}  // namespace levyprune
