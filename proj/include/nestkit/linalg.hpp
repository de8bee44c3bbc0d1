#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cstddef>
#include <vector>

#include "nestkit/errors.hpp"

namespace nestkit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Vector to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> from_eigen(const Vector& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

// Rows = points.
inline Matrix points_matrix(const std::vector<std::vector<double>>& pts) {
    if (pts.empty()) throw invalid_argument("points_matrix: no points");
    const auto n = static_cast<Eigen::Index>(pts.size());
    const auto d = static_cast<Eigen::Index>(pts.front().size());
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<Eigen::Index>(pts[static_cast<std::size_t>(i)].size()) != d)
            throw invalid_argument("points_matrix: ragged rows");
        m.row(i) = to_eigen(pts[static_cast<std::size_t>(i)]).transpose();
    }
    return m;
}

inline Vector mean_point(const Matrix& pts) { return pts.colwise().mean(); }

// Sample covariance (n-1 denominator) of rows; falls back to the population
// form for a single point (zero matrix).
inline Matrix sample_covariance(const Matrix& pts, const Vector& mean) {
    const auto n = pts.rows();
    Matrix centered = pts.rowwise() - mean.transpose();
    double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    return centered.transpose() * centered / denom;
}

inline Matrix sample_covariance(const Matrix& pts) { return sample_covariance(pts, mean_point(pts)); }

// Adds a trace-scaled ridge so nearly-singular fits stay decomposable.
inline void add_jitter(Matrix& cov, double rel = 1e-10) {
    const auto d = cov.rows();
    double tr = cov.trace();
    double eps = rel * (tr > 0.0 ? tr / static_cast<double>(d) : 1.0);
    cov.diagonal().array() += eps;
}

inline Matrix jittered(Matrix cov, double rel = 1e-10) {
    add_jitter(cov, rel);
    return cov;
}

// Lower Cholesky factor; throws when the matrix is not positive definite.
inline Matrix cholesky_lower(const Matrix& cov) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) throw degenerate_geometry("cholesky: matrix not positive definite");
    return llt.matrixL();
}

// Squared Mahalanobis distance via the pre-computed lower factor.
inline double maha_sq(const Matrix& chol_lower, const Vector& center, const Vector& x) {
    Vector y = chol_lower.triangularView<Eigen::Lower>().solve(x - center);
    return y.squaredNorm();
}

inline double log_det_from_chol(const Matrix& chol_lower) {
    return 2.0 * chol_lower.diagonal().array().log().sum();
}

}  // namespace nestkit
