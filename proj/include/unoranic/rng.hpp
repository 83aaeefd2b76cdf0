#pragma once

// Counter-based and sequential pseudo-random generators built on the
// SplitMix64 finalizer. Every random decision in the library (weight init,
// corruption noise, shuffling, spec sampling) goes through these so that
// results depend only on integer seeds and counters, never on the standard
// library's distribution implementations.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace unoranic::rng {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Order-sensitive combination of two keys.
constexpr std::uint64_t combine(std::uint64_t a, std::uint64_t b) noexcept {
    return mix64(a ^ mix64(b + 0x632BE59BD9B4E019ULL));
}

template <typename... Rest>
constexpr std::uint64_t combine(std::uint64_t a, std::uint64_t b, Rest... rest) noexcept {
    return combine(combine(a, b), static_cast<std::uint64_t>(rest)...);
}

/// FNV-1a over bytes; used to derive per-name seeds.
constexpr std::uint64_t hash_string(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Uniform double in [0, 1) from the top 53 bits.
constexpr double to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Stateless generator: value i of stream `key` is a pure function of (key, i).
class CounterRng {
public:
    constexpr explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

    constexpr std::uint64_t bits(std::uint64_t counter) const noexcept { return combine(key_, counter); }
    constexpr double uniform(std::uint64_t counter) const noexcept { return to_unit(bits(counter)); }

    /// Standard normal via Box-Muller on counters (2i, 2i+1); cosine branch only.
    double normal(std::uint64_t counter) const noexcept {
        const double u1 = 1.0 - uniform(2 * counter);  // (0, 1]
        const double u2 = uniform(2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    constexpr std::uint64_t key() const noexcept { return key_; }

private:
    std::uint64_t key_;
};

/// Sequential generator (SplitMix64 stream).
class Rng {
public:
    constexpr explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

    constexpr std::uint64_t next() noexcept {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    constexpr double uniform() noexcept { return to_unit(next()); }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept {
        // Rejection keeps the draw exactly uniform.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next();
        while (x >= limit) x = next();
        return x % n;
    }

    double normal() noexcept {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t state_;
};

}  // namespace unoranic::rng
