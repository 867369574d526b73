// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include "gedi/errors.hpp"

namespace gedi {

// splitmix64 finalizer. Used both as the generator step and for deriving
// independent child streams.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Deterministic RNG with explicit, platform-independent output. std::
/// distributions are implementation-defined, so sampling is done by hand;
/// identical seeds give identical streams on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0,1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw InvalidArgument("Rng::uniform_below: n must be positive");
        // Rejection-free multiply-shift; bias is < 2^-64 * n, negligible and
        // deterministic.
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Standard normal via Box-Muller (two uniforms per call, no caching).
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    /// Draw an index from an unnormalized nonnegative weight vector.
    std::size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (!(total > 0.0)) throw NumericError("Rng::categorical: weights sum to zero");
        double u = uniform01() * total;
        double acc = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] > 0.0) last_positive = i;
            acc += weights[i];
            if (u < acc) return i;
        }
        return last_positive; // guard against fp round-off at the tail
    }

    /// Child stream i. Derived from the construction seed only, so forks are
    /// independent of the parent's draw history and safe to hand out from a
    /// parallel loop.
    Rng fork(std::uint64_t stream) const {
        return Rng(mix64(seed_ ^ mix64(stream + 0x9E3779B97F4A7C15ull)));
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
};

} // namespace gedi
