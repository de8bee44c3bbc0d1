#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "nestkit/errors.hpp"
#include "nestkit/problems.hpp"
#include "nestkit/rng.hpp"

namespace nestkit {

// Geometry hint handed to samplers: the current live set in unit coordinates.
struct LivePoint {
    const std::vector<double>* unit;
    double logl;
    int id;
};

// One likelihood-restricted prior draw. ok=false is the efficiency-failure
// signal: the sampler exhausted its budget without beating the threshold;
// evals still reports what was spent. Callers may refit and retry.
struct LrpsDraw {
    bool ok = false;
    std::vector<double> unit;
    std::vector<double> physical;
    double logl = kNegInf;
    long evals = 0;
};

// A likelihood-restricted prior sampler: draws a point with logL strictly
// above log_l_min, using the live points as geometry hints. `iteration` is
// the global removal counter; region samplers key their refit cadence and
// their fit randomness to it so that replayed or resumed runs are bit-exact.
class Lrps {
  public:
    virtual ~Lrps() = default;
    virtual std::string name() const = 0;
    virtual LrpsDraw sample(const std::vector<LivePoint>& live, double log_l_min, const ProblemRef& prob,
                            std::uint64_t iteration, Rng& rng) = 0;
    // Invalidate cached geometry (called between efficiency-failure retries).
    virtual void force_refit() {}
    // Step samplers report the step count used by the most recent draw.
    virtual long last_steps() const { return 0; }

    // Path state that tree replay cannot reconstruct (cached region fits,
    // adapted scales and step counts), as one whitespace-token line with
    // hex-float numbers. Persisting it alongside the tree lets a resumed run
    // draw bit-identically to an uninterrupted one. Stateless samplers keep
    // the empty default.
    virtual void save_state(std::ostream& os) const { (void)os; }
    virtual void load_state(std::istream& is) { (void)is; }
};

// Oracle sampler: delegates to the problem's analytic contour sampler.
// Exact by construction; exists for calibration and tests.
class OracleLrps final : public Lrps {
  public:
    std::string name() const override { return "oracle"; }
    LrpsDraw sample(const std::vector<LivePoint>&, double log_l_min, const ProblemRef& prob, std::uint64_t,
                    Rng& rng) override {
        if (!prob.problem().sample_contour) throw invalid_argument("oracle lrps: problem has no contour sampler");
        LrpsDraw d;
        for (int attempt = 0; attempt < 64; ++attempt) {
            std::vector<double> u = prob.problem().sample_contour(log_l_min, rng);
            if (u.empty()) return d;  // contour empty: nothing above the threshold
            std::vector<double> phys;
            double logl = prob.log_l_unit(u, &phys);
            ++d.evals;
            if (logl > log_l_min) {
                d.ok = true;
                d.unit = std::move(u);
                d.physical = std::move(phys);
                d.logl = logl;
                return d;
            }
        }
        return d;  // oracle repeatedly landed on the boundary: treat as exhausted
    }
};

// Brute-force rejection from the whole unit cube. The reference sampler:
// unbiased everywhere, exponentially slow as the contour shrinks.
class RejectionCubeLrps final : public Lrps {
  public:
    explicit RejectionCubeLrps(long budget = 100000) : budget_(budget) {}
    std::string name() const override { return "cube-rejection"; }
    LrpsDraw sample(const std::vector<LivePoint>&, double log_l_min, const ProblemRef& prob, std::uint64_t,
                    Rng& rng) override {
        LrpsDraw d;
        for (long attempt = 0; attempt < budget_; ++attempt) {
            std::vector<double> u = rng.unit_cube(prob.dim());
            std::vector<double> phys;
            double logl = prob.log_l_unit(u, &phys);
            ++d.evals;
            if (logl > log_l_min) {
                d.ok = true;
                d.unit = std::move(u);
                d.physical = std::move(phys);
                d.logl = logl;
                return d;
            }
        }
        return d;
    }

  private:
    long budget_;
};

}  // namespace nestkit
