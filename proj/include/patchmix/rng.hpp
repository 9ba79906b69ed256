#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

namespace patchmix {

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seeded generator with platform-independent draws.
///
/// Wraps std::mt19937_64 but derives uniforms and normals by hand so that
/// sequences do not depend on the standard library's distribution classes,
/// and so that no hidden state (e.g. a cached Box-Muller deviate) survives
/// between calls.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream for a (root seed, tag path) pair.
    static Rng derive(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
        std::uint64_t h = mix64(root);
        for (auto p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
        return Rng(h);
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n) by rejection (unbiased). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller; consumes two uniforms per call.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Normal truncated to [-2, 2] standard deviations (resampled), then scaled.
    double truncated_normal(double stddev) {
        double v;
        do {
            v = normal();
        } while (v < -2.0 || v > 2.0);
        return v * stddev;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace patchmix
