#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nestkit/errors.hpp"
#include "nestkit/linalg.hpp"
#include "nestkit/lrps.hpp"
#include "nestkit/region.hpp"
#include "nestkit/rng.hpp"

namespace nestkit {

enum class StepKind { gauss, slice };
enum class DirectionMode { axis, random_sphere, covariance };

inline DirectionMode direction_from_string(const std::string& s) {
    if (s == "axis") return DirectionMode::axis;
    if (s == "sphere") return DirectionMode::random_sphere;
    if (s == "covariance") return DirectionMode::covariance;
    throw invalid_argument("direction: expected axis|sphere|covariance, got '" + s + "'");
}

// One walker's trajectory bookkeeping. accumulated_displacement is measured
// in the whitened (live-covariance) frame so it is comparable with the mean
// pairwise distance of the live set, which is ~sqrt(2d) for a healthy cloud.
struct WalkState {
    std::vector<double> current;
    double current_logl = kNegInf;
    long steps_taken = 0;
    long likelihood_evals = 0;
    double accumulated_displacement = 0.0;
    bool stuck = false;
};

// Sivia-style step-size controller: the scale persists across walks, the
// accept/reject counts do not. Repeated acceptance inflates the scale
// harmonically, repeated rejection deflates it the same way.
struct SiviaScale {
    double scale = 1.0;
    long accepts = 0;
    long rejects = 0;

    void reset_counts() { accepts = rejects = 0; }
    void on_accept() {
        ++accepts;
        scale *= std::exp(1.0 / static_cast<double>(accepts));
    }
    void on_reject() {
        ++rejects;
        scale *= std::exp(-1.0 / static_cast<double>(rejects));
    }
};

// Move-distance step-count tuner: a walk that traveled less than the typical
// inter-point distance was too short (double it), one that traveled farther
// can afford to shorten.
inline int auto_tune_steps(int steps, double displacement, double reference) {
    if (displacement < reference) return std::min(1024, steps * 2);
    return std::max(1, steps - 1);
}

namespace detail {

inline Vector random_sphere_vec(int d, Rng& rng) {
    Vector v(d);
    double norm = 0.0;
    do {
        for (int i = 0; i < d; ++i) v[i] = rng.normal();
        norm = v.norm();
    } while (norm == 0.0);
    return v / norm;
}

inline Vector direction_vector(DirectionMode mode, const Matrix* chol, int d, Rng& rng) {
    switch (mode) {
        case DirectionMode::axis: {
            Vector v = Vector::Zero(d);
            v[static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(d)))] = 1.0;
            return v;
        }
        case DirectionMode::random_sphere:
            return random_sphere_vec(d, rng);
        case DirectionMode::covariance: {
            Vector s = random_sphere_vec(d, rng);
            if (!chol) return s;
            return chol->triangularView<Eigen::Lower>() * s;
        }
    }
    throw invalid_argument("direction: bad mode");
}

inline bool in_unit_cube(const Vector& x) {
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (x[i] < 0.0 || x[i] >= 1.0) return false;
    return true;
}

inline double whitened_norm(const Matrix* chol, const Vector& v) {
    if (!chol) return v.norm();
    return chol->triangularView<Eigen::Lower>().solve(v).norm();
}

}  // namespace detail

// One Metropolis proposal: current + scale * (chol z | z). Out-of-cube and
// out-of-region proposals are rejected without a likelihood call; otherwise
// one evaluation decides. Returns whether the walker moved.
inline bool gauss_walk_step(WalkState& walk, SiviaScale& scale, const Matrix* chol, double log_l_min,
                            const ProblemRef& prob, const Ellipsoid* filter, Rng& rng) {
    const int d = prob.dim();
    Vector z(d);
    for (int i = 0; i < d; ++i) z[i] = rng.normal();
    Vector step = chol ? Vector(chol->triangularView<Eigen::Lower>() * z) : z;
    step *= scale.scale;
    const Vector cur = to_eigen(walk.current);
    Vector proposal = cur + step;
    ++walk.steps_taken;

    bool accepted = false;
    if (detail::in_unit_cube(proposal)) {
        std::vector<double> u = from_eigen(proposal);
        if (!filter || filter->contains(u)) {
            const double logl = prob.log_l_unit(u);
            ++walk.likelihood_evals;
            if (logl > log_l_min) {
                walk.accumulated_displacement += detail::whitened_norm(chol, step);
                walk.current = std::move(u);
                walk.current_logl = logl;
                accepted = true;
            }
        }
    }
    accepted ? scale.on_accept() : scale.on_reject();
    return accepted;
}

// One slice-sampling move along `direction`: start from the full chord of the
// cube, draw uniformly, shrink toward the rejected side until acceptance.
// Region-filtered proposals shrink the interval without costing a call. A
// chord collapsing to nothing throws stuck_walker.
inline void slice_step(WalkState& walk, const Vector& direction, double log_l_min, const ProblemRef& prob,
                       const Ellipsoid* filter, const Matrix* displacement_chol, Rng& rng) {
    const Vector cur = to_eigen(walk.current);
    const int d = prob.dim();
    double t_lo = -kPosInf, t_hi = kPosInf;
    for (int i = 0; i < d; ++i) {
        const double v = direction[i];
        if (v == 0.0) continue;
        const double a = (0.0 - cur[i]) / v;
        const double b = (1.0 - cur[i]) / v;
        t_lo = std::max(t_lo, std::min(a, b));
        t_hi = std::min(t_hi, std::max(a, b));
    }
    if (!(t_lo < t_hi)) throw stuck_walker("slice: degenerate chord");

    const double dir_norm = direction.norm();
    for (;;) {
        if ((t_hi - t_lo) * dir_norm < 1e-30) throw stuck_walker("slice: interval collapsed");
        const double t = t_lo + rng.uniform() * (t_hi - t_lo);
        Vector proposal = cur + t * direction;
        bool rejected;
        if (!detail::in_unit_cube(proposal)) {
            rejected = true;  // boundary effects from closed-interval roundoff
        } else {
            std::vector<double> u = from_eigen(proposal);
            if (filter && !filter->contains(u)) {
                rejected = true;
            } else {
                const double logl = prob.log_l_unit(u);
                ++walk.likelihood_evals;
                if (logl > log_l_min) {
                    walk.accumulated_displacement += detail::whitened_norm(displacement_chol, Vector(t * direction));
                    walk.current = std::move(u);
                    walk.current_logl = logl;
                    ++walk.steps_taken;
                    return;
                }
                rejected = true;
            }
        }
        if (rejected) {
            if (t < 0.0)
                t_lo = t;
            else
                t_hi = t;
        }
    }
}

struct StepOptions {
    StepKind kind = StepKind::slice;
    DirectionMode direction = DirectionMode::random_sphere;
    int steps = 16;             // slice: accepted moves per walk; gauss: proposals per walk
    double scale = 1.0;         // initial gauss-walk step size, relative to the live metric
    bool adapt_steps = false;   // move-distance tuner
    bool region_filter = false;
    int region_rounds = 50;
    double region_keep = 0.70;
};

// Reference distance for the move-distance tuner: the mean pairwise distance
// of the live points in the whitened frame. For a healthy Gaussian cloud this
// sits near sqrt(2d).
inline double mean_pairwise_mahalanobis(const std::vector<LivePoint>& live, const Matrix* chol) {
    const std::size_t n = live.size();
    if (n < 2) return 0.0;
    Matrix pts = detail::live_matrix(live);
    Matrix w = chol ? Matrix(chol->triangularView<Eigen::Lower>().solve(pts.transpose()).transpose()) : pts;
    double total = 0.0;
    std::size_t pairs = 0;
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = i + 1; j < w.rows(); ++j) {
            total += (w.row(i) - w.row(j)).norm();
            ++pairs;
        }
    return total / static_cast<double>(pairs);
}

// Run one walk of `steps` kernel steps starting from `start`. A chord
// collapse ends the walk early with `stuck` set; the partial bookkeeping
// (evals spent, moves made) survives.
inline WalkState lrps_walk(const StepOptions& opts, std::vector<double> start, double start_logl,
                           double log_l_min, const ProblemRef& prob, const Matrix* chol,
                           const Ellipsoid* filter, SiviaScale& scale, Rng& rng) {
    WalkState walk;
    walk.current = std::move(start);
    walk.current_logl = start_logl;
    if (opts.kind == StepKind::gauss) {
        scale.reset_counts();
        for (int i = 0; i < opts.steps; ++i) gauss_walk_step(walk, scale, chol, log_l_min, prob, filter, rng);
    } else {
        while (walk.steps_taken < opts.steps) {
            const Vector v = detail::direction_vector(opts.direction, chol, prob.dim(), rng);
            try {
                slice_step(walk, v, log_l_min, prob, filter, chol, rng);
            } catch (const stuck_walker&) {
                walk.stuck = true;
                break;
            }
        }
    }
    return walk;
}

// Step-sampler LRPS: pick a random live point above the threshold and walk it
// until it forgets where it started. Gauss walks fail cleanly when nothing
// was accepted; slice walks fail cleanly when a chord collapses (plateau).
class StepLrps final : public Lrps {
  public:
    explicit StepLrps(std::uint64_t seed, StepOptions opts = {})
        : opts_(opts), schedule_(seed), steps_(opts.steps) {
        if (opts.steps < 1) throw invalid_argument("step lrps: steps must be positive");
        if (!(opts.scale > 0.0)) throw invalid_argument("step lrps: scale must be positive");
        scale_.scale = opts.scale;
    }

    std::string name() const override {
        if (opts_.kind == StepKind::gauss) return "gauss";
        return opts_.direction == DirectionMode::axis ? "slice" : "harm";
    }

    LrpsDraw sample(const std::vector<LivePoint>& live, double log_l_min, const ProblemRef& prob,
                    std::uint64_t iteration, Rng& rng) override {
        std::vector<const LivePoint*> above;
        for (const auto& lp : live)
            if (lp.logl > log_l_min) above.push_back(&lp);
        if (above.empty()) return {};

        Matrix chol;
        const Matrix* chol_ptr = nullptr;
        if (live.size() >= 2) {
            try {
                chol = cholesky_lower(jittered(sample_covariance(detail::live_matrix(live))));
                chol_ptr = &chol;
            } catch (const degenerate_geometry&) {
                chol_ptr = nullptr;  // collapsed cloud: fall back to the identity metric
            }
        }

        const Ellipsoid* filter = nullptr;
        if (opts_.region_filter && live.size() >= 2) {
            if (schedule_.due(iteration, live.size())) {
                Rng fit_rng = schedule_.fit_rng();
                try {
                    filter_ = fit_ellipsoid(detail::live_matrix(live), fit_rng, opts_.region_rounds,
                                            opts_.region_keep);
                    has_filter_ = true;
                } catch (const degenerate_geometry&) {
                    has_filter_ = false;
                }
            }
            if (has_filter_) filter = &filter_;
        }

        const LivePoint& start = *above[rng.index(above.size())];
        StepOptions walk_opts = opts_;
        walk_opts.steps = steps_;
        last_steps_ = steps_;

        LrpsDraw d;
        WalkState walk =
            lrps_walk(walk_opts, *start.unit, start.logl, log_l_min, prob, chol_ptr, filter, scale_, rng);
        d.evals = walk.likelihood_evals;
        if (!walk.stuck && walk.accumulated_displacement > 0.0 && walk.current_logl > log_l_min) {
            d.ok = true;
            d.unit = walk.current;
            d.logl = walk.current_logl;
            d.physical = prob.problem().prior(d.unit);
        }

        if (opts_.adapt_steps) {
            const double reference = mean_pairwise_mahalanobis(live, chol_ptr);
            steps_ = auto_tune_steps(steps_, walk.accumulated_displacement, reference);
        }
        return d;
    }

    void force_refit() override { schedule_.force(); }
    long last_steps() const override { return last_steps_; }
    double scale() const { return scale_.scale; }
    int configured_steps() const { return steps_; }

    void save_state(std::ostream& os) const override {
        os << "step";
        detail::put_real(os, scale_.scale);
        os << ' ' << steps_;
        schedule_.save(os);
        os << ' ' << (has_filter_ ? 1 : 0);
        if (has_filter_) filter_.save(os);
    }
    void load_state(std::istream& is) override {
        detail::expect_tag(is, "step");
        scale_.scale = detail::take_real(is);
        steps_ = static_cast<int>(detail::take_int(is));
        if (steps_ < 1) throw invalid_argument("sampler state: bad step count");
        schedule_.restore(is);
        has_filter_ = detail::take_int(is) != 0;
        if (has_filter_) filter_ = Ellipsoid::load(is);
    }

  private:
    StepOptions opts_;
    RegionRefitSchedule schedule_;
    SiviaScale scale_;
    int steps_;
    long last_steps_ = 0;
    Ellipsoid filter_;
    bool has_filter_ = false;
};

}  // namespace nestkit
