#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nestkit/errors.hpp"
#include "nestkit/math.hpp"
#include "nestkit/priors.hpp"
#include "nestkit/rng.hpp"

namespace nestkit {

// An inference task: prior transform plus log-likelihood, with optional
// analytic ground truth used by tests and diagnostics.
//
// sample_contour, when present, draws a unit-cube point uniformly from the
// region strictly above a likelihood threshold (an oracle LRPS). An empty
// vector means no such point exists (e.g. threshold at the likelihood cap).
struct Problem {
    std::string name;
    int dim = 0;
    PriorTransform prior;
    std::function<double(const std::vector<double>&)> log_likelihood;  // physical point
    std::optional<double> analytic_log_z;
    std::function<double(double)> volume_at_log_l;  // log L -> prior volume fraction X; NaN where unknown
    std::function<std::vector<double>(double, Rng&)> sample_contour;
};

// Borrowed problem plus a shared evaluation counter; everything that costs a
// likelihood call goes through log_l_unit.
class ProblemRef {
  public:
    ProblemRef(const Problem& p, long* evals) : p_(&p), evals_(evals) {}

    const Problem& problem() const { return *p_; }
    int dim() const { return p_->dim; }
    long evals() const { return evals_ ? *evals_ : 0; }

    double log_l_unit(const std::vector<double>& u, std::vector<double>* physical_out = nullptr) const {
        std::vector<double> phys = p_->prior(u);
        if (evals_) ++*evals_;
        double logl = p_->log_likelihood(phys);
        if (physical_out) *physical_out = std::move(phys);
        return logl;
    }

  private:
    const Problem* p_;
    long* evals_;
};

inline Problem constant_problem(int d) {
    Problem p;
    p.name = "constant";
    p.dim = d;
    p.prior = uniform_box_transform(d, 0.0, 1.0);
    p.log_likelihood = [](const std::vector<double>&) { return 0.0; };
    p.analytic_log_z = 0.0;
    p.volume_at_log_l = [](double log_l) { return log_l < 0.0 ? 1.0 : 0.0; };
    p.sample_contour = [d](double log_l_min, Rng& rng) -> std::vector<double> {
        if (log_l_min >= 0.0) return {};  // nothing lies strictly above the constant
        return rng.unit_cube(d);
    };
    return p;
}

// Spherical Gaussian on the box [-1,1]^d: logL = -|theta|^2 / (2 sigma^2).
inline Problem gaussian_problem(int d, double sigma) {
    if (!(sigma > 0.0)) throw invalid_argument("gaussian problem: sigma must be positive");
    Problem p;
    p.name = "gaussian";
    p.dim = d;
    p.prior = uniform_box_transform(d, -1.0, 1.0);
    double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    p.log_likelihood = [inv2s2](const std::vector<double>& x) {
        double ss = 0.0;
        for (double xi : x) ss += xi * xi;
        return -ss * inv2s2;
    };
    // Per dimension: (1/2) * int_{-1}^{1} exp(-x^2/2s^2) dx = s*sqrt(2pi)*erf(1/(s*sqrt2))/2.
    p.analytic_log_z =
        d * std::log(sigma * std::sqrt(2.0 * std::numbers::pi) * std::erf(1.0 / (sigma * std::numbers::sqrt2)) / 2.0);
    // Contour {logL > T} is the ball of radius sigma*sqrt(-2T); the fraction
    // is exact while that ball fits inside the box, unknown (NaN) beyond.
    p.volume_at_log_l = [d, sigma](double log_l) {
        if (log_l >= 0.0) return 0.0;
        double r = sigma * std::sqrt(-2.0 * log_l);
        if (r > 1.0) return std::numeric_limits<double>::quiet_NaN();
        return std::exp(log_unit_ball_volume(d) + d * std::log(r) - d * std::log(2.0));
    };
    p.sample_contour = [d, sigma](double log_l_min, Rng& rng) -> std::vector<double> {
        if (log_l_min == kNegInf) return rng.unit_cube(d);
        if (log_l_min >= 0.0) return {};
        double r = sigma * std::sqrt(-2.0 * log_l_min);
        for (int attempt = 0; attempt < 1000000; ++attempt) {
            std::vector<double> x = rng.ball(d);
            std::vector<double> u(static_cast<std::size_t>(d));
            bool inside = true;
            for (int i = 0; i < d; ++i) {
                double xi = x[static_cast<std::size_t>(i)] * r;
                if (xi < -1.0 || xi > 1.0) {
                    inside = false;
                    break;
                }
                u[static_cast<std::size_t>(i)] = (xi + 1.0) / 2.0;
            }
            if (inside) return u;
        }
        return {};
    };
    return p;
}

// Ring in d dimensions: Gaussian profile around radius r with width w, the
// density normalization written as (2 pi w)^(-1/2).
inline Problem gaussian_shell_problem(double r, double w, int d) {
    if (!(r > 0.0) || !(w > 0.0)) throw invalid_argument("shell problem: r, w must be positive");
    Problem p;
    p.name = "gaussian-shell";
    p.dim = d;
    p.prior = uniform_box_transform(d, -1.0, 1.0);
    p.log_likelihood = [r, w](const std::vector<double>& x) {
        double ss = 0.0;
        for (double xi : x) ss += xi * xi;
        double dist = std::sqrt(ss);
        double t = (dist - r) / w;
        return -0.5 * std::log(2.0 * std::numbers::pi * w) - 0.5 * t * t;
    };
    if (d == 2 && r + 8.0 * w < 1.0) {
        // The ring sits away from the box edge; the residual truncation error
        // is O(exp(-(r/w)^2/2)), negligible for any tested configuration.
        p.analytic_log_z = std::log(2.0 * std::numbers::pi * r * std::sqrt(w)) - d * std::log(2.0);
    }
    return p;
}

// L = 1 / max_i |theta_i - 1/2| on the unit cube; exceptionally sensitive to
// shrinkage bias because the contours are boxes with sharp corners.
inline Problem hyper_rectangle_problem(int d) {
    Problem p;
    p.name = "hyper-rectangle";
    p.dim = d;
    p.prior = uniform_box_transform(d, 0.0, 1.0);
    p.log_likelihood = [](const std::vector<double>& x) {
        double m = 0.0;
        for (double xi : x) m = std::max(m, std::abs(xi - 0.5));
        return -std::log(std::max(m, 1e-300));
    };
    // Contour {logL > T} is the open box of half-width exp(-T) around the
    // center, clipped to the cube.
    p.volume_at_log_l = [d](double log_l) {
        double h = std::exp(-log_l);
        if (h >= 0.5) return 1.0;
        return std::exp(d * std::log(2.0 * h));
    };
    p.sample_contour = [d](double log_l_min, Rng& rng) -> std::vector<double> {
        double h = log_l_min == kNegInf ? 0.5 : std::min(0.5, std::exp(-log_l_min));
        std::vector<double> u(static_cast<std::size_t>(d));
        for (auto& ui : u) ui = 0.5 + (2.0 * rng.uniform() - 1.0) * h;
        return u;
    };
    return p;
}

// L = min(1/theta, e^100) on (0,1): an extreme heavy tail whose posterior
// mass is spread over ~100 e-folds of volume. Z = 1 + 100 = 101 exactly.
inline Problem heavy_tail_problem() {
    Problem p;
    p.name = "heavy-tail";
    p.dim = 1;
    p.prior = uniform_box_transform(1, 0.0, 1.0);
    p.log_likelihood = [](const std::vector<double>& x) { return std::min(-std::log(std::max(x[0], 1e-300)), 100.0); };
    p.analytic_log_z = std::log(101.0);
    p.volume_at_log_l = [](double log_l) {
        if (log_l >= 100.0) return 0.0;
        return std::min(1.0, std::exp(-log_l));
    };
    p.sample_contour = [](double log_l_min, Rng& rng) -> std::vector<double> {
        if (log_l_min >= 100.0) return {};  // the cap is a plateau; nothing is strictly above
        double hi = log_l_min == kNegInf ? 1.0 : std::min(1.0, std::exp(-log_l_min));
        return {rng.uniform() * hi};
    };
    return p;
}

// Two-level step function: L = 1 on [0, 1/2), L = 2 on [1/2, 1]. Both levels
// are genuine plateaus; Z = 1.5.
inline Problem step_plateau_problem() {
    Problem p;
    p.name = "step-plateau";
    p.dim = 1;
    p.prior = uniform_box_transform(1, 0.0, 1.0);
    const double log2 = std::log(2.0);
    p.log_likelihood = [log2](const std::vector<double>& x) { return x[0] < 0.5 ? 0.0 : log2; };
    p.analytic_log_z = std::log(1.5);
    p.volume_at_log_l = [log2](double log_l) {
        if (log_l < 0.0) return 1.0;
        if (log_l < log2) return 0.5;
        return 0.0;
    };
    p.sample_contour = [log2](double log_l_min, Rng& rng) -> std::vector<double> {
        if (log_l_min < 0.0) return {rng.uniform()};
        if (log_l_min >= log2) return {};
        return {0.5 + 0.5 * rng.uniform()};  // only the upper step exceeds L=1
    };
    return p;
}

// Narrow ring of radius 1e-11 with a 100x brighter small companion ring: a
// two-stage phase-transition problem probing dynamic range and auto-tuning.
// The reference logZ comes from adaptive polar quadrature around each ring.
inline constexpr double kDiamondRingLogZ = -37.6653168755;

inline Problem diamond_ring_problem() {
    Problem p;
    p.name = "diamond-ring";
    p.dim = 2;
    p.prior = uniform_box_transform(2, -1.0, 1.0);
    const double r1 = 1e-11, w1 = 0.4e-11;
    const double r2 = r1 / 40.0, w2 = w1 / 40.0;
    p.log_likelihood = [=](const std::vector<double>& x) {
        double d1 = std::hypot(x[0], x[1]);
        double d2 = std::hypot(x[0] + r1, x[1]);
        double t1 = (d1 - r1) / w1;
        double t2 = (d2 - r2) / w2;
        double log_n1 = -0.5 * std::log(2.0 * std::numbers::pi * w1) - 0.5 * t1 * t1;
        double log_n2 = -0.5 * std::log(2.0 * std::numbers::pi * w2) - 0.5 * t2 * t2;
        return logaddexp(log_n1, std::log(100.0) + log_n2);
    };
    p.analytic_log_z = kDiamondRingLogZ;
    return p;
}

}  // namespace nestkit
