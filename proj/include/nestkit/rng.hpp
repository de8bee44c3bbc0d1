#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nestkit/math.hpp"

namespace nestkit {

// Deterministic counter-based generator (splitmix64). Every random decision in
// the library draws from a stream derived from (seed, stream kind, index), so
// runs replay bit-exactly regardless of thread scheduling or resume points.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return finalize(state_);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via inverse-CDF; consumes exactly one draw.
    double normal() {
        double u = uniform();
        if (u <= 0.0) u = 0x1.0p-53;
        return inv_phi(u);
    }

    // Uniform point in the unit d-ball: scaled direction from d normals plus
    // one radius draw. Consumes d + 1 draws.
    std::vector<double> ball(int d) {
        std::vector<double> x(static_cast<std::size_t>(d));
        double norm_sq = 0.0;
        for (auto& xi : x) {
            xi = normal();
            norm_sq += xi * xi;
        }
        double norm = std::sqrt(norm_sq);
        double r = std::pow(uniform(), 1.0 / d);
        if (norm == 0.0) norm = 1.0;
        for (auto& xi : x) xi *= r / norm;
        return x;
    }

    std::vector<double> unit_cube(int d) {
        std::vector<double> u(static_cast<std::size_t>(d));
        for (auto& ui : u) ui = uniform();
        return u;
    }

    // Index in [0, n).
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

    static std::uint64_t finalize(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ULL;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBULL;
        z ^= z >> 31;
        return z;
    }

  private:
    std::uint64_t state_;
};

// Stream kinds. Each (kind, index) pair names an independent substream of the
// run seed; indices are stable identifiers (node ids, iteration numbers, fold
// numbers, fit epochs, ...), never call counts.
namespace stream {
inline constexpr std::uint64_t node_sample = 1;
inline constexpr std::uint64_t shrink = 2;
inline constexpr std::uint64_t fold = 3;
inline constexpr std::uint64_t region_fit = 4;
inline constexpr std::uint64_t resample = 5;
inline constexpr std::uint64_t experiment = 6;
}  // namespace stream

inline std::uint64_t substream(std::uint64_t seed, std::uint64_t kind, std::uint64_t index) {
    std::uint64_t a = Rng::finalize((seed ^ 0x9E3779B97F4A7C15ULL) + kind);
    return Rng::finalize((a ^ 0xBF58476D1CE4E5B9ULL) + index);
}

inline Rng substream_rng(std::uint64_t seed, std::uint64_t kind, std::uint64_t index) {
    return Rng(substream(seed, kind, index));
}

}  // namespace nestkit
