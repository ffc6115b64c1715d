#pragma once

#include <cstdint>
#include <cmath>

namespace capl {

/// SplitMix64 generator (Steele, Lea & Flood 2014). Chosen over the standard
/// library engines because its output sequence is fully specified by the
/// algorithm, so seeded runs are bit-reproducible on every platform, and
/// because independent streams can be split off cheaply by key.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0,1) with 53 bits of mantissa.
    double next_double() {
        return double(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo,hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Uniform integer in [0,n). n must be > 0; modulo bias is irrelevant at
    /// the range sizes used here but we reject it anyway via 64-bit multiply.
    std::uint64_t next_below(std::uint64_t n) {
        return std::uint64_t((__uint128_t(next_u64()) * n) >> 64);
    }

    /// Standard normal via Box-Muller. Draws two uniforms per call and
    /// discards the second variate so the stream position is input-independent.
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    /// Poisson via inversion for small means, normal approximation above 64.
    std::uint64_t next_poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean > 64.0) {
            double v = mean + std::sqrt(mean) * next_normal();
            return v < 0.0 ? 0 : std::uint64_t(v + 0.5);
        }
        double l = std::exp(-mean), p = 1.0;
        std::uint64_t k = 0;
        do {
            ++k;
            p *= next_double();
        } while (p > l);
        return k - 1;
    }

    /// Deterministic child stream for (this generator, key). Mixing uses one
    /// SplitMix64 scramble of the parent state xor the key.
    Rng split(std::uint64_t key) const {
        std::uint64_t z = state_ ^ (0x9e3779b97f4a7c15ULL * (key + 0x632be59bd9b4e019ULL));
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

private:
    std::uint64_t state_;
};

}  // namespace capl
