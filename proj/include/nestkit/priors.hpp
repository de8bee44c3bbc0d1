#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "nestkit/errors.hpp"
#include "nestkit/linalg.hpp"
#include "nestkit/math.hpp"

namespace nestkit {

// One stage of a prior transform chain. A block consumes dim_in unit-cube
// coordinates and appends dim_out physical parameters to `out`; `out`
// already holds everything produced by earlier blocks, so later blocks can
// condition on earlier parameters.
class PriorBlock {
  public:
    virtual ~PriorBlock() = default;
    virtual int dim_in() const = 0;
    virtual int dim_out() const = 0;
    virtual void apply(const double* u, std::vector<double>& out) const = 0;
};

// Unit inputs are nudged off the cube boundary so every transform stays
// finite; the displaced mass is far below any statistical resolution here.
inline double clamp_unit(double u) { return std::clamp(u, 1e-15, 1.0 - 1e-15); }

struct DimSpec {
    enum class Kind { uniform, normal, log_uniform } kind;
    double a, b;  // uniform/log-uniform: bounds; normal: mean, sd

    static DimSpec uniform(double a, double b) {
        if (!(a < b)) throw invalid_argument("uniform prior: need a < b");
        return {Kind::uniform, a, b};
    }
    static DimSpec normal(double mu, double sigma) {
        if (!(sigma > 0.0)) throw invalid_argument("normal prior: need sigma > 0");
        return {Kind::normal, mu, sigma};
    }
    static DimSpec log_uniform(double a, double b) {
        if (!(0.0 < a && a < b)) throw invalid_argument("log-uniform prior: need 0 < a < b");
        return {Kind::log_uniform, a, b};
    }

    double transform(double u) const {
        switch (kind) {
            // Only the unbounded map needs its endpoints fenced off; the
            // bounded maps must stay exact down to denormal u (heavy-tailed
            // likelihoods genuinely probe the deep corner of the cube).
            case Kind::uniform: return a + (b - a) * u;
            case Kind::normal: return a + b * inv_phi(clamp_unit(u));
            case Kind::log_uniform: return std::exp(std::log(a) + (std::log(b) - std::log(a)) * u);
        }
        throw invalid_argument("prior: bad dimension spec");
    }
};

class InverseCdfBlock final : public PriorBlock {
  public:
    explicit InverseCdfBlock(std::vector<DimSpec> specs) : specs_(std::move(specs)) {
        if (specs_.empty()) throw invalid_argument("prior: no dimensions");
    }
    int dim_in() const override { return static_cast<int>(specs_.size()); }
    int dim_out() const override { return static_cast<int>(specs_.size()); }
    void apply(const double* u, std::vector<double>& out) const override {
        for (std::size_t i = 0; i < specs_.size(); ++i) out.push_back(specs_[i].transform(u[i]));
    }

  private:
    std::vector<DimSpec> specs_;
};

// theta = A z + mu with z the per-dimension standard-normal quantile and
// A the lower Cholesky factor of the covariance.
class CorrelatedGaussianBlock final : public PriorBlock {
  public:
    CorrelatedGaussianBlock(std::vector<double> mean, const Matrix& covariance) : mean_(std::move(mean)) {
        const auto d = static_cast<Eigen::Index>(mean_.size());
        if (covariance.rows() != d || covariance.cols() != d)
            throw invalid_argument("correlated gaussian prior: shape mismatch");
        try {
            chol_ = cholesky_lower(covariance);
        } catch (const degenerate_geometry&) {
            throw invalid_argument("correlated gaussian prior: covariance not positive definite");
        }
    }
    int dim_in() const override { return static_cast<int>(mean_.size()); }
    int dim_out() const override { return static_cast<int>(mean_.size()); }
    void apply(const double* u, std::vector<double>& out) const override {
        const auto d = static_cast<Eigen::Index>(mean_.size());
        Vector z(d);
        for (Eigen::Index i = 0; i < d; ++i) z[i] = inv_phi(clamp_unit(u[i]));
        Vector theta = chol_.triangularView<Eigen::Lower>() * z;
        for (Eigen::Index i = 0; i < d; ++i) out.push_back(theta[i] + mean_[static_cast<std::size_t>(i)]);
    }

  private:
    std::vector<double> mean_;
    Matrix chol_;
};

// Flat Dirichlet over k fractions: theta_i = (-log u_i) / sum_j (-log u_j).
class DirichletBlock final : public PriorBlock {
  public:
    explicit DirichletBlock(int k) : k_(k) {
        if (k < 2) throw invalid_argument("dirichlet prior: need k >= 2");
    }
    int dim_in() const override { return k_; }
    int dim_out() const override { return k_; }
    void apply(const double* u, std::vector<double>& out) const override {
        double sum = 0.0;
        std::size_t base = out.size();
        for (int i = 0; i < k_; ++i) {
            double z = -std::log(clamp_unit(u[i]));
            out.push_back(z);
            sum += z;
        }
        for (int i = 0; i < k_; ++i) out[base + static_cast<std::size_t>(i)] /= sum;
    }

  private:
    int k_;
};

// Sequential composition of blocks over disjoint slices of the unit cube.
class PriorTransform {
  public:
    PriorTransform() = default;
    explicit PriorTransform(std::vector<std::shared_ptr<const PriorBlock>> blocks) : blocks_(std::move(blocks)) {
        for (const auto& b : blocks_) {
            dim_in_ += b->dim_in();
            dim_out_ += b->dim_out();
        }
        if (dim_in_ == 0) throw invalid_argument("prior: empty transform");
    }

    int dim_in() const { return dim_in_; }
    int dim_out() const { return dim_out_; }

    std::vector<double> operator()(const std::vector<double>& u) const {
        if (static_cast<int>(u.size()) != dim_in_) throw invalid_argument("prior: input dimension mismatch");
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(dim_out_));
        const double* cursor = u.data();
        for (const auto& b : blocks_) {
            b->apply(cursor, out);
            cursor += b->dim_in();
        }
        return out;
    }

  private:
    std::vector<std::shared_ptr<const PriorBlock>> blocks_;
    int dim_in_ = 0;
    int dim_out_ = 0;
};

inline PriorTransform inverse_cdf_transform(std::vector<DimSpec> specs) {
    return PriorTransform({std::make_shared<InverseCdfBlock>(std::move(specs))});
}

inline PriorTransform correlated_gaussian_transform(std::vector<double> mean, const Matrix& covariance) {
    return PriorTransform({std::make_shared<CorrelatedGaussianBlock>(std::move(mean), covariance)});
}

inline PriorTransform dirichlet_transform(int k) {
    return PriorTransform({std::make_shared<DirichletBlock>(k)});
}

inline PriorTransform uniform_box_transform(int d, double a, double b) {
    return inverse_cdf_transform(std::vector<DimSpec>(static_cast<std::size_t>(d), DimSpec::uniform(a, b)));
}

}  // namespace nestkit
