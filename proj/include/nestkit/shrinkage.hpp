#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "nestkit/errors.hpp"
#include "nestkit/math.hpp"
#include "nestkit/rng.hpp"

namespace nestkit {

// How the removed prior-volume fraction is estimated at each removal with N
// live points. Arithmetic and geometric are the two deterministic summaries
// of the Beta(N,1) retained fraction; stochastic draws the fraction itself.
enum class EstimatorKind { arithmetic, geometric, stochastic };

inline const char* to_string(EstimatorKind k) {
    switch (k) {
        case EstimatorKind::arithmetic: return "arithmetic";
        case EstimatorKind::geometric: return "geometric";
        case EstimatorKind::stochastic: return "stochastic";
    }
    return "?";
}

inline EstimatorKind estimator_from_string(const std::string& s) {
    if (s == "arithmetic") return EstimatorKind::arithmetic;
    if (s == "geometric") return EstimatorKind::geometric;
    if (s == "stochastic") return EstimatorKind::stochastic;
    throw invalid_argument("unknown estimator '" + s + "'");
}

// Removed-volume fraction for one step; linear-space convenience form.
inline double shrink_fraction(EstimatorKind kind, int n, Rng& rng) {
    if (n < 1) throw invalid_argument("shrink_fraction: N must be positive");
    switch (kind) {
        case EstimatorKind::arithmetic: return 1.0 / (n + 1.0);
        case EstimatorKind::geometric: return -std::expm1(-1.0 / n);
        case EstimatorKind::stochastic: {
            // Removed fraction ~ Beta(1,N): t = 1 - (1-u)^(1/N).
            double u = rng.uniform();
            return -std::expm1(std::log1p(-u) / n);
        }
    }
    throw invalid_argument("shrink_fraction: bad estimator");
}

struct ShrinkStep {
    double log_retained;  // log of the volume fraction kept
    double log_fraction;  // log of the volume fraction removed
};

// Estimator bound to a run seed. The stochastic draw for iteration i comes
// from substream (seed, shrink, i), so a resumed or re-ordered run reproduces
// the identical volume sequence.
class Shrinkage {
  public:
    Shrinkage(EstimatorKind kind, std::uint64_t seed) : kind_(kind), seed_(seed) {}

    EstimatorKind kind() const { return kind_; }
    std::uint64_t seed() const { return seed_; }

    ShrinkStep step(int n, std::uint64_t iteration) const {
        if (n < 1) throw invalid_argument("shrinkage: N must be positive");
        switch (kind_) {
            case EstimatorKind::arithmetic:
                return {std::log1p(-1.0 / (n + 1.0)), -std::log(n + 1.0)};
            case EstimatorKind::geometric:
                return {-1.0 / n, std::log(-std::expm1(-1.0 / n))};
            case EstimatorKind::stochastic: {
                Rng r = substream_rng(seed_, stream::shrink, iteration);
                double u = r.uniform();
                double log_retained = std::log1p(-u) / n;
                return {log_retained, std::log(-std::expm1(log_retained))};
            }
        }
        throw invalid_argument("shrinkage: bad estimator");
    }

  private:
    EstimatorKind kind_;
    std::uint64_t seed_;
};

}  // namespace nestkit
