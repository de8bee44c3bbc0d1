#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "nestkit/errors.hpp"
#include "nestkit/linalg.hpp"
#include "nestkit/lrps.hpp"
#include "nestkit/math.hpp"
#include "nestkit/problems.hpp"
#include "nestkit/rng.hpp"

namespace nestkit {

namespace detail {

// First k entries of a partial Fisher-Yates shuffle of 0..n-1.
inline std::vector<std::size_t> random_subset(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k && i + 1 < n; ++i)
        std::swap(idx[i], idx[i + rng.index(n - i)]);
    idx.resize(k);
    return idx;
}

inline Matrix live_matrix(const std::vector<LivePoint>& live) {
    if (live.empty()) throw invalid_argument("region fit: no live points");
    const auto d = static_cast<Eigen::Index>(live.front().unit->size());
    Matrix m(static_cast<Eigen::Index>(live.size()), d);
    for (std::size_t i = 0; i < live.size(); ++i) {
        if (static_cast<Eigen::Index>(live[i].unit->size()) != d)
            throw invalid_argument("region fit: ragged live points");
        for (Eigen::Index j = 0; j < d; ++j)
            m(static_cast<Eigen::Index>(i), j) = (*live[i].unit)[static_cast<std::size_t>(j)];
    }
    return m;
}

inline std::size_t bootstrap_keep_count(Eigen::Index n, Eigen::Index d, double keep) {
    auto k = static_cast<std::size_t>(std::lround(keep * static_cast<double>(n)));
    return std::min<std::size_t>(static_cast<std::size_t>(n),
                                 std::max<std::size_t>(static_cast<std::size_t>(d) + 2, k));
}

// Whitespace-token state serialization: hex floats round-trip bit-exactly.
inline void put_real(std::ostream& os, double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%a", x);
    os << ' ' << buf;
}

inline std::string take_token(std::istream& is) {
    std::string tok;
    if (!(is >> tok)) throw invalid_argument("sampler state: truncated");
    return tok;
}

inline double take_real(std::istream& is) {
    const std::string tok = take_token(is);
    char* end = nullptr;
    const double x = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw invalid_argument("sampler state: bad number '" + tok + "'");
    return x;
}

inline long long take_int(std::istream& is) {
    const std::string tok = take_token(is);
    char* end = nullptr;
    const long long x = std::strtoll(tok.c_str(), &end, 10);
    if (end == tok.c_str() || *end != '\0') throw invalid_argument("sampler state: bad integer '" + tok + "'");
    return x;
}

inline void expect_tag(std::istream& is, const std::string& tag) {
    const std::string tok = take_token(is);
    if (tok != tag) throw invalid_argument("sampler state: expected '" + tag + "', found '" + tok + "'");
}

inline void put_lower_triangle(std::ostream& os, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j <= i; ++j) put_real(os, m(i, j));
}

inline Matrix take_lower_triangle(std::istream& is, Eigen::Index d) {
    Matrix m = Matrix::Zero(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) m(i, j) = take_real(is);
    return m;
}

}  // namespace detail

// Bounding ellipsoid of a point cloud, bootstrap-enlarged so that it covers
// not just the points but (with high probability) the region they were drawn
// from. `shape` is the sample covariance scaled to put the farthest point on
// the unit-Mahalanobis surface; membership allows maha^2 up to `enlargement`.
struct Ellipsoid {
    Vector center;
    Matrix chol_shape;  // lower Cholesky factor of the shape matrix
    double enlargement = 1.0;
    double log_det_shape = 0.0;

    int dim() const { return static_cast<int>(center.size()); }

    double maha_shape_sq(const std::vector<double>& x) const {
        return maha_sq(chol_shape, center, to_eigen(x));
    }

    bool contains(const std::vector<double>& x) const {
        return maha_shape_sq(x) <= enlargement * (1.0 + 1e-12);
    }

    std::vector<double> sample(Rng& rng) const {
        const Vector b = to_eigen(rng.ball(dim()));
        const Vector t = chol_shape.triangularView<Eigen::Lower>() * b;
        Vector x = center + std::sqrt(enlargement) * t;
        return from_eigen(x);
    }

    void save(std::ostream& os) const {
        os << ' ' << center.size();
        for (Eigen::Index i = 0; i < center.size(); ++i) detail::put_real(os, center[i]);
        detail::put_lower_triangle(os, chol_shape);
        detail::put_real(os, enlargement);
        detail::put_real(os, log_det_shape);
    }

    static Ellipsoid load(std::istream& is) {
        const auto d = static_cast<Eigen::Index>(detail::take_int(is));
        if (d < 1) throw invalid_argument("sampler state: bad ellipsoid dimension");
        Ellipsoid e;
        e.center.resize(d);
        for (Eigen::Index i = 0; i < d; ++i) e.center[i] = detail::take_real(is);
        e.chol_shape = detail::take_lower_triangle(is, d);
        e.enlargement = detail::take_real(is);
        e.log_det_shape = detail::take_real(is);
        return e;
    }

    double log_volume() const {
        return log_unit_ball_volume(dim()) + 0.5 * log_det_shape + 0.5 * dim() * std::log(enlargement);
    }
};

// Fit the bounding ellipsoid: covariance + jitter, normalized so the worst
// point sits on the surface, then enlarged by the worst bootstrap round. Each
// round refits on a random `keep` fraction (at least d+2 points) and measures
// how far outside the left-out points land. rounds = 0 disables enlargement.
inline Ellipsoid fit_ellipsoid(const Matrix& pts, Rng& fit_rng, int rounds = 50, double keep = 0.70) {
    const Eigen::Index n = pts.rows(), d = pts.cols();
    if (n < 2) throw invalid_argument("ellipsoid fit: need at least two points");

    const Vector mean = mean_point(pts);
    Matrix cov = jittered(sample_covariance(pts));
    const Matrix chol = cholesky_lower(cov);
    double m = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) m = std::max(m, maha_sq(chol, mean, pts.row(i).transpose()));
    if (!(m > 0.0)) throw degenerate_geometry("ellipsoid fit: all points coincide");

    double enlargement = 1.0;
    const std::size_t k = detail::bootstrap_keep_count(n, d, keep);
    for (int round = 0; round < rounds; ++round) {
        const auto kept = detail::random_subset(static_cast<std::size_t>(n), k, fit_rng);
        if (kept.size() == static_cast<std::size_t>(n)) continue;
        std::vector<bool> is_kept(static_cast<std::size_t>(n), false);
        Matrix sub(static_cast<Eigen::Index>(kept.size()), d);
        for (std::size_t i = 0; i < kept.size(); ++i) {
            is_kept[kept[i]] = true;
            sub.row(static_cast<Eigen::Index>(i)) = pts.row(static_cast<Eigen::Index>(kept[i]));
        }
        const Vector sub_mean = mean_point(sub);
        Matrix sub_chol;
        try {
            sub_chol = cholesky_lower(jittered(sample_covariance(sub)));
        } catch (const degenerate_geometry&) {
            continue;  // pathological subset; this round contributes nothing
        }
        double m_kept = 0.0;
        for (Eigen::Index i = 0; i < sub.rows(); ++i)
            m_kept = std::max(m_kept, maha_sq(sub_chol, sub_mean, sub.row(i).transpose()));
        if (!(m_kept > 0.0)) continue;
        double factor = 1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (is_kept[static_cast<std::size_t>(i)]) continue;
            factor = std::max(factor, maha_sq(sub_chol, sub_mean, pts.row(i).transpose()) / m_kept);
        }
        enlargement = std::max(enlargement, factor);
    }

    Ellipsoid e;
    e.center = mean;
    e.chol_shape = chol * std::sqrt(m);
    e.enlargement = enlargement;
    e.log_det_shape = log_det_from_chol(e.chol_shape);
    return e;
}

inline std::vector<double> sample_ellipsoid(const Ellipsoid& e, Rng& rng) { return e.sample(rng); }

// Union of identical Mahalanobis balls around every live point, with the
// metric learned from cluster-mean-subtracted coordinates and the radius from
// the worst bootstrap round of left-out nearest-neighbor distances.
struct MLFriendsRegion {
    Matrix points;       // n x d original coordinates
    Matrix chol_metric;  // lower Cholesky factor of the metric
    Matrix whitened;     // n x d points in the whitened frame
    double radius_sq = 0.0;
    std::vector<int> cluster_of;
    int n_clusters = 0;

    int dim() const { return static_cast<int>(points.cols()); }

    Vector whiten(const std::vector<double>& x) const {
        return chol_metric.triangularView<Eigen::Lower>().solve(to_eigen(x));
    }

    double min_maha_sq(const Vector& w) const {
        return (whitened.rowwise() - w.transpose()).rowwise().squaredNorm().minCoeff();
    }

    // Number of balls covering the whitened point.
    int multiplicity(const Vector& w) const {
        const auto dists = (whitened.rowwise() - w.transpose()).rowwise().squaredNorm();
        int count = 0;
        for (Eigen::Index i = 0; i < dists.size(); ++i)
            if (dists[i] <= radius_sq) ++count;
        return count;
    }

    bool contains(const std::vector<double>& x) const { return min_maha_sq(whiten(x)) <= radius_sq; }

    void save(std::ostream& os) const {
        os << ' ' << points.rows() << ' ' << points.cols();
        for (Eigen::Index i = 0; i < points.rows(); ++i)
            for (Eigen::Index j = 0; j < points.cols(); ++j) detail::put_real(os, points(i, j));
        detail::put_lower_triangle(os, chol_metric);
        detail::put_real(os, radius_sq);
        os << ' ' << n_clusters;
        for (int c : cluster_of) os << ' ' << c;
    }

    // The whitened frame is recomputed from the stored metric, which is the
    // same solve the fit performed, so the round trip is bit-exact.
    static MLFriendsRegion load(std::istream& is) {
        const auto n = static_cast<Eigen::Index>(detail::take_int(is));
        const auto d = static_cast<Eigen::Index>(detail::take_int(is));
        if (n < 2 || d < 1) throw invalid_argument("sampler state: bad region shape");
        MLFriendsRegion r;
        r.points.resize(n, d);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < d; ++j) r.points(i, j) = detail::take_real(is);
        r.chol_metric = detail::take_lower_triangle(is, d);
        r.radius_sq = detail::take_real(is);
        r.n_clusters = static_cast<int>(detail::take_int(is));
        r.cluster_of.resize(static_cast<std::size_t>(n));
        for (auto& c : r.cluster_of) c = static_cast<int>(detail::take_int(is));
        r.whitened = r.chol_metric.triangularView<Eigen::Lower>().solve(r.points.transpose()).transpose();
        return r;
    }
};

namespace detail {

// Largest over left-out points of the squared whitened distance to the
// nearest kept point; rounds = 0 falls back to leave-one-out.
inline double bootstrap_radius_sq(const Matrix& whitened, int rounds, double keep, Rng& rng) {
    const Eigen::Index n = whitened.rows(), d = whitened.cols();
    double radius_sq = 0.0;
    if (rounds == 0) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double nearest = kPosInf;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) continue;
                nearest = std::min(nearest, (whitened.row(i) - whitened.row(j)).squaredNorm());
            }
            radius_sq = std::max(radius_sq, nearest);
        }
        return radius_sq;
    }
    const std::size_t k = bootstrap_keep_count(n, d, keep);
    for (int round = 0; round < rounds; ++round) {
        const auto kept = random_subset(static_cast<std::size_t>(n), k, rng);
        if (kept.size() == static_cast<std::size_t>(n)) continue;
        std::vector<bool> is_kept(static_cast<std::size_t>(n), false);
        Matrix sub(static_cast<Eigen::Index>(kept.size()), d);
        for (std::size_t i = 0; i < kept.size(); ++i) {
            is_kept[kept[i]] = true;
            sub.row(static_cast<Eigen::Index>(i)) = whitened.row(static_cast<Eigen::Index>(kept[i]));
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            if (is_kept[static_cast<std::size_t>(i)]) continue;
            const double nearest = (sub.rowwise() - whitened.row(i)).rowwise().squaredNorm().minCoeff();
            radius_sq = std::max(radius_sq, nearest);
        }
    }
    return radius_sq;
}

inline std::vector<int> link_clusters(const Matrix& whitened, double radius_sq) {
    const Eigen::Index n = whitened.rows();
    std::vector<int> parent(static_cast<std::size_t>(n));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int a) {
        while (parent[static_cast<std::size_t>(a)] != a) {
            parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
            a = parent[static_cast<std::size_t>(a)];
        }
        return a;
    };
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            if ((whitened.row(i) - whitened.row(j)).squaredNorm() <= radius_sq) {
                int ri = find(static_cast<int>(i)), rj = find(static_cast<int>(j));
                if (ri != rj) parent[static_cast<std::size_t>(ri)] = rj;
            }
    std::vector<int> label(static_cast<std::size_t>(n), -1), out(static_cast<std::size_t>(n));
    int next = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        int r = find(static_cast<int>(i));
        if (label[static_cast<std::size_t>(r)] < 0) label[static_cast<std::size_t>(r)] = next++;
        out[static_cast<std::size_t>(i)] = label[static_cast<std::size_t>(r)];
    }
    return out;
}

}  // namespace detail

// Alternate metric learning and clustering to a fixed point (at most ten
// passes): subtract each point's cluster mean, whiten by the pooled
// covariance, measure the bootstrap radius, re-link clusters.
inline MLFriendsRegion mlfriends_fit(const Matrix& pts, Rng& fit_rng, int rounds = 50, double keep = 0.70) {
    const Eigen::Index n = pts.rows(), d = pts.cols();
    if (n < 2) throw invalid_argument("mlfriends fit: need at least two points");

    MLFriendsRegion r;
    r.points = pts;
    r.cluster_of.assign(static_cast<std::size_t>(n), 0);
    r.n_clusters = 1;
    for (int pass = 0; pass < 10; ++pass) {
        Matrix centered = pts;
        std::vector<Vector> means(static_cast<std::size_t>(r.n_clusters), Vector::Zero(d));
        std::vector<int> sizes(static_cast<std::size_t>(r.n_clusters), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            means[static_cast<std::size_t>(r.cluster_of[static_cast<std::size_t>(i)])] += pts.row(i).transpose();
            ++sizes[static_cast<std::size_t>(r.cluster_of[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < r.n_clusters; ++c) means[static_cast<std::size_t>(c)] /= sizes[static_cast<std::size_t>(c)];
        for (Eigen::Index i = 0; i < n; ++i)
            centered.row(i) -= means[static_cast<std::size_t>(r.cluster_of[static_cast<std::size_t>(i)])].transpose();

        r.chol_metric = cholesky_lower(jittered(sample_covariance(centered)));
        r.whitened =
            r.chol_metric.triangularView<Eigen::Lower>().solve(pts.transpose()).transpose();
        r.radius_sq = detail::bootstrap_radius_sq(r.whitened, rounds, keep, fit_rng);
        if (!(r.radius_sq > 0.0)) throw degenerate_geometry("mlfriends fit: all points coincide");

        std::vector<int> next = detail::link_clusters(r.whitened, r.radius_sq);
        const int next_count = 1 + *std::max_element(next.begin(), next.end());
        if (next == r.cluster_of) break;
        r.cluster_of = std::move(next);
        r.n_clusters = next_count;
    }
    return r;
}

// Uniform draw from the union of balls: random anchor, ball offset in the
// whitened frame, then acceptance with probability 1/multiplicity so overlap
// regions are not over-weighted. The returned point may lie outside the cube.
inline std::vector<double> sample_region(const MLFriendsRegion& r, Rng& rng) {
    const int d = r.dim();
    const double radius = std::sqrt(r.radius_sq);
    for (;;) {
        const auto anchor = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(r.points.rows())));
        const Vector b = to_eigen(rng.ball(d));
        const Vector w = r.whitened.row(anchor).transpose() + radius * b;
        const int mult = r.multiplicity(w);
        if (mult > 1 && rng.uniform() * mult > 1.0) continue;
        Vector x = r.chol_metric.triangularView<Eigen::Lower>() * w;
        return from_eigen(x);
    }
}

inline bool region_contains(const Ellipsoid& e, const std::vector<double>& x) { return e.contains(x); }
inline bool region_contains(const MLFriendsRegion& r, const std::vector<double>& x) { return r.contains(x); }

namespace detail {

// Shared rejection loop for region samplers: propose, discard outside the
// cube without spending a likelihood call, otherwise evaluate and test.
template <class ProposeFn>
LrpsDraw lrps_rejection(ProposeFn&& propose, double log_l_min, const ProblemRef& prob, long max_proposals,
                        Rng& rng) {
    LrpsDraw d;
    const int dim = prob.dim();
    for (long attempt = 0; attempt < max_proposals; ++attempt) {
        std::vector<double> u = propose(rng);
        bool in_cube = true;
        for (int i = 0; i < dim; ++i)
            if (u[static_cast<std::size_t>(i)] < 0.0 || u[static_cast<std::size_t>(i)] >= 1.0) {
                in_cube = false;
                break;
            }
        if (!in_cube) continue;
        std::vector<double> phys;
        const double logl = prob.log_l_unit(u, &phys);
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

}  // namespace detail

// Region refits are keyed to (epoch, attempt) so identical runs replay
// identically: the fit RNG never touches the caller's draw stream, and the
// cadence scales with the live count (every max(1, (N+4)/5) iterations).
class RegionRefitSchedule {
  public:
    explicit RegionRefitSchedule(std::uint64_t seed) : seed_(seed) {}

    bool due(std::uint64_t iteration, std::size_t n_live) {
        const std::uint64_t cadence = std::max<std::uint64_t>(1, (n_live + 4) / 5);
        const std::uint64_t epoch = iteration / cadence;
        if (fitted_ && epoch == epoch_ && !forced_) return false;
        if (!fitted_ || epoch != epoch_) attempt_ = 0;
        epoch_ = epoch;
        return true;
    }

    Rng fit_rng() {
        fitted_ = true;
        forced_ = false;
        return substream_rng(seed_, stream::region_fit, epoch_ * 8 + attempt_);
    }

    void force() {
        forced_ = true;
        if (attempt_ < 7) ++attempt_;
    }

    bool fitted() const { return fitted_; }

    void save(std::ostream& os) const {
        os << ' ' << epoch_ << ' ' << attempt_ << ' ' << (fitted_ ? 1 : 0) << ' ' << (forced_ ? 1 : 0);
    }
    void restore(std::istream& is) {
        epoch_ = static_cast<std::uint64_t>(detail::take_int(is));
        attempt_ = static_cast<std::uint64_t>(detail::take_int(is));
        fitted_ = detail::take_int(is) != 0;
        forced_ = detail::take_int(is) != 0;
    }

  private:
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::uint64_t attempt_ = 0;
    bool fitted_ = false;
    bool forced_ = false;
};

class EllipsoidLrps final : public Lrps {
  public:
    explicit EllipsoidLrps(std::uint64_t seed, int rounds = 50, double keep = 0.70, long max_proposals = 1000)
        : schedule_(seed), rounds_(rounds), keep_(keep), max_proposals_(max_proposals) {}

    std::string name() const override { return "ellipsoid"; }

    LrpsDraw sample(const std::vector<LivePoint>& live, double log_l_min, const ProblemRef& prob,
                    std::uint64_t iteration, Rng& rng) override {
        if (live.size() < 2) return {};  // geometry starvation: clean efficiency failure
        if (schedule_.due(iteration, live.size())) {
            Rng fit_rng = schedule_.fit_rng();
            try {
                region_ = fit_ellipsoid(detail::live_matrix(live), fit_rng, rounds_, keep_);
                has_region_ = true;
            } catch (const degenerate_geometry&) {
                has_region_ = false;  // collapsed live set (terminal plateau)
            }
        }
        if (!has_region_) return {};
        const Ellipsoid& e = region_;
        return detail::lrps_rejection([&e](Rng& r) { return e.sample(r); }, log_l_min, prob, max_proposals_, rng);
    }

    void force_refit() override { schedule_.force(); }

    const Ellipsoid& region() const { return region_; }

    void save_state(std::ostream& os) const override {
        os << "ellipsoid";
        schedule_.save(os);
        os << ' ' << (has_region_ ? 1 : 0);
        if (has_region_) region_.save(os);
    }
    void load_state(std::istream& is) override {
        detail::expect_tag(is, "ellipsoid");
        schedule_.restore(is);
        has_region_ = detail::take_int(is) != 0;
        if (has_region_) region_ = Ellipsoid::load(is);
    }

  private:
    RegionRefitSchedule schedule_;
    int rounds_;
    double keep_;
    long max_proposals_;
    Ellipsoid region_;
    bool has_region_ = false;
};

class MLFriendsLrps final : public Lrps {
  public:
    explicit MLFriendsLrps(std::uint64_t seed, int rounds = 50, double keep = 0.70, long max_proposals = 1000)
        : schedule_(seed), rounds_(rounds), keep_(keep), max_proposals_(max_proposals) {}

    std::string name() const override { return "mlfriends"; }

    LrpsDraw sample(const std::vector<LivePoint>& live, double log_l_min, const ProblemRef& prob,
                    std::uint64_t iteration, Rng& rng) override {
        if (live.size() < 2) return {};
        if (schedule_.due(iteration, live.size())) {
            Rng fit_rng = schedule_.fit_rng();
            try {
                region_ = mlfriends_fit(detail::live_matrix(live), fit_rng, rounds_, keep_);
                has_region_ = true;
            } catch (const degenerate_geometry&) {
                has_region_ = false;
            }
        }
        if (!has_region_) return {};
        const MLFriendsRegion& r = region_;
        return detail::lrps_rejection([&r](Rng& g) { return sample_region(r, g); }, log_l_min, prob,
                                      max_proposals_, rng);
    }

    void force_refit() override { schedule_.force(); }

    const MLFriendsRegion& region() const { return region_; }

    void save_state(std::ostream& os) const override {
        os << "mlfriends";
        schedule_.save(os);
        os << ' ' << (has_region_ ? 1 : 0);
        if (has_region_) region_.save(os);
    }
    void load_state(std::istream& is) override {
        detail::expect_tag(is, "mlfriends");
        schedule_.restore(is);
        has_region_ = detail::take_int(is) != 0;
        if (has_region_) region_ = MLFriendsRegion::load(is);
    }

  private:
    RegionRefitSchedule schedule_;
    int rounds_;
    double keep_;
    long max_proposals_;
    MLFriendsRegion region_;
    bool has_region_ = false;
};

}  // namespace nestkit
