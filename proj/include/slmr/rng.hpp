#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "slmr/errors.hpp"

namespace slmr {

// Deterministic RNG used everywhere. We draw raw 64-bit words from
// std::mt19937_64 (whose output sequence is fixed by the standard) and do the
// float conversions ourselves, so results are reproducible across platforms
// and standard-library versions.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1) with 53 bits of precision
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller (one value per call, spare discarded)
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // geometric run length on support {1, 2, ...} with stop probability p
    std::uint64_t geometric(double p) {
        if (p <= 0.0 || p > 1.0) throw ConfigError("geometric stop probability must be in (0,1], got " + std::to_string(p));
        if (p == 1.0) return 1;
        const double u = uniform();
        const double len = 1.0 + std::floor(std::log1p(-u) / std::log1p(-p));
        return len < 1.0 ? 1 : static_cast<std::uint64_t>(len);
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

    // splitmix64 step; used to derive independent per-stream seeds
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

  private:
    std::mt19937_64 engine_;
};

} // namespace slmr
