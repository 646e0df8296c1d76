#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace panelqr {

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed of substream `index` under master seed `seed`. Depends only on the
/// pair, so substreams can be created in any order or on any thread.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    return mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/// Purpose tags keep substreams of different consumers disjoint.
enum class StreamPurpose : std::uint64_t { BootstrapWeights = 1, DataGeneration = 2, ReplicationBootstrap = 3, Oracle = 4 };

constexpr std::uint64_t derive_seed(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index) noexcept {
    return derive_seed(derive_seed(seed, static_cast<std::uint64_t>(purpose)), index);
}

/// Reproducible random stream. Variates are produced by explicit transforms
/// of 53-bit uniforms from mt19937_64, so sequences are identical across
/// standard library implementations.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}
    RandomStream(std::uint64_t seed, std::uint64_t index) : engine_(derive_seed(seed, index)) {}

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept {
        for (;;) {
            const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
            if (u > 0.0) return u;
        }
    }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Standard normal by the Box-Muller transform (the second variate is cached).
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double radius = std::sqrt(-2.0 * std::log(uniform()));
        const double angle = 2.0 * std::numbers::pi * uniform();
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double exponential() noexcept { return -std::log(uniform()); }

    /// Chi-squared with integer degrees of freedom, as a sum of squared normals.
    double chi_squared(int dof) noexcept {
        double total = 0.0;
        for (int k = 0; k < dof; ++k) {
            const double z = normal();
            total += z * z;
        }
        return total;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace panelqr
