#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <numbers>
#include <vector>

#include "nestkit/diagnostics.hpp"
#include "nestkit/linalg.hpp"
#include "nestkit/problems.hpp"
#include "nestkit/region.hpp"
#include "nestkit/rng.hpp"

using namespace nestkit;
using Catch::Matchers::WithinAbs;

TEST_CASE("bounding ellipsoid touches the farthest point") {
    // Cross pattern: semi-axes must come out as exactly 0.2 and 0.4.
    Matrix pts = points_matrix({{0.7, 0.5}, {0.3, 0.5}, {0.5, 0.9}, {0.5, 0.1}});
    Rng rng(1);
    Ellipsoid e = fit_ellipsoid(pts, rng, 0);
    CHECK(e.enlargement == 1.0);
    CHECK_THAT(e.center[0], WithinAbs(0.5, 1e-12));
    CHECK_THAT(e.center[1], WithinAbs(0.5, 1e-12));
    CHECK_THAT(e.log_det_shape, WithinAbs(std::log(0.04 * 0.16), 1e-8));
    CHECK_THAT(e.log_volume(), WithinAbs(std::log(std::numbers::pi * 0.2 * 0.4), 1e-8));
    for (int i = 0; i < 4; ++i) {
        CHECK(e.contains(from_eigen(Vector(pts.row(i).transpose()))));
        CHECK_THAT(e.maha_shape_sq(from_eigen(Vector(pts.row(i).transpose()))), WithinAbs(1.0, 1e-9));
    }
    CHECK(e.contains({0.69, 0.5}));
    CHECK_FALSE(e.contains({0.71, 0.5}));
    CHECK(e.contains({0.65, 0.65}));       // maha^2 = 0.70
    CHECK_FALSE(e.contains({0.68, 0.70}));  // maha^2 = 1.06
}

TEST_CASE("ellipsoid samples are uniform inside the boundary") {
    Matrix pts(100, 2);
    Rng gen(5);
    for (int i = 0; i < 100; ++i) {
        pts(i, 0) = 0.5 + 0.1 * gen.normal();
        pts(i, 1) = 0.3 + 0.02 * gen.normal();
    }
    Rng fit_rng(2);
    Ellipsoid e = fit_ellipsoid(pts, fit_rng, 50);
    CHECK(e.enlargement >= 1.0);
    CHECK(e.enlargement < 100.0);

    Rng draw(3);
    double mean_maha = 0.0, mean_x = 0.0;
    const int n = 5000;
    for (int i = 0; i < n; ++i) {
        std::vector<double> x = sample_ellipsoid(e, draw);
        REQUIRE(e.contains(x));
        mean_maha += e.maha_shape_sq(x) / e.enlargement;
        mean_x += x[0];
    }
    // Uniform in a d-ball: E[r^2] = d / (d + 2); the mean recovers the center.
    CHECK_THAT(mean_maha / n, WithinAbs(0.5, 0.02));
    CHECK_THAT(mean_x / n, WithinAbs(e.center[0], 0.01));
}

TEST_CASE("ellipsoid fitting is deterministic and validates input") {
    Matrix pts(30, 3);
    Rng gen(7);
    for (int i = 0; i < 30; ++i)
        for (int j = 0; j < 3; ++j) pts(i, j) = gen.uniform();
    Rng r1(11), r2(11), r3(12);
    Ellipsoid a = fit_ellipsoid(pts, r1, 50);
    Ellipsoid b = fit_ellipsoid(pts, r2, 50);
    Ellipsoid c = fit_ellipsoid(pts, r3, 50);
    CHECK(a.enlargement == b.enlargement);
    CHECK(a.log_det_shape == b.log_det_shape);
    CHECK(a.enlargement != c.enlargement);

    Matrix one(1, 2);
    one << 0.5, 0.5;
    Rng rr(0);
    CHECK_THROWS_AS(fit_ellipsoid(one, rr, 0), invalid_argument);
    Matrix same(5, 2);
    for (int i = 0; i < 5; ++i) same.row(i) << 0.5, 0.5;
    CHECK_THROWS_AS(fit_ellipsoid(same, rr, 0), degenerate_geometry);
}

TEST_CASE("mlfriends radius from leave-one-out distances") {
    Matrix pts = points_matrix({{0.1}, {0.2}, {0.3}});
    Rng rng(1);
    MLFriendsRegion r = mlfriends_fit(pts, rng, 0);
    // Variance 0.01, adjacent gaps 0.1: squared whitened distance 1.
    CHECK_THAT(r.radius_sq, WithinAbs(1.0, 1e-6));
    CHECK(r.n_clusters == 1);
    CHECK(r.contains({0.35}));
    CHECK_FALSE(r.contains({0.45}));
    CHECK(region_contains(r, {0.05}));

    Matrix one(1, 1);
    one << 0.5;
    CHECK_THROWS_AS(mlfriends_fit(one, rng, 0), invalid_argument);
    Matrix same(4, 1);
    for (int i = 0; i < 4; ++i) same(i, 0) = 0.5;
    CHECK_THROWS_AS(mlfriends_fit(same, rng, 0), degenerate_geometry);
}

TEST_CASE("mlfriends metric converges to cluster-subtracted covariance") {
    Matrix pts = points_matrix({{0.1}, {0.12}, {0.14}, {0.8}, {0.82}, {0.84}});
    Rng rng(1);
    MLFriendsRegion r = mlfriends_fit(pts, rng, 0);
    CHECK(r.n_clusters == 2);
    // Residual variance 0.0016/5; nearest-neighbor gap 0.02 squared over it.
    CHECK_THAT(r.radius_sq, WithinAbs(1.25, 1e-6));
    CHECK(r.cluster_of[0] == r.cluster_of[1]);
    CHECK(r.cluster_of[0] != r.cluster_of[3]);
    CHECK(r.cluster_of[3] == r.cluster_of[5]);
}

TEST_CASE("region samples are uniform over the union of balls") {
    Matrix pts = points_matrix({{0.3}, {0.7}});
    Rng rng(1);
    MLFriendsRegion r = mlfriends_fit(pts, rng, 0);
    CHECK_THAT(r.radius_sq, WithinAbs(2.0, 1e-6));
    CHECK(r.n_clusters == 1);

    // Balls of half-width 0.4 around 0.3 and 0.7: the union is [-0.1, 1.1];
    // the overlap [0.3, 0.7] must not be double-weighted.
    Rng draw(21);
    std::vector<double> u;
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
        double x = sample_region(r, draw)[0];
        REQUIRE(x >= -0.1 - 1e-9);
        REQUIRE(x <= 1.1 + 1e-9);
        u.push_back((x + 0.1) / 1.2);
    }
    std::sort(u.begin(), u.end());
    double d_stat = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        d_stat = std::max(d_stat, std::max((i + 1.0) / n - u[i], u[i] - static_cast<double>(i) / n));
    }
    CHECK(ks_p_value(d_stat, u.size()) > 0.01);
}

TEST_CASE("refit schedule is keyed to iteration epochs") {
    RegionRefitSchedule s(42);
    CHECK(s.due(0, 100));  // cadence 20: epoch 0
    (void)s.fit_rng();
    CHECK_FALSE(s.due(5, 100));
    CHECK_FALSE(s.due(19, 100));
    CHECK(s.due(20, 100));  // epoch 1
    (void)s.fit_rng();
    CHECK_FALSE(s.due(21, 100));
    s.force();
    CHECK(s.due(21, 100));
    (void)s.fit_rng();
    CHECK_FALSE(s.due(21, 100));
    // Small frontiers refit every iteration.
    RegionRefitSchedule tiny(0);
    CHECK(tiny.due(7, 1));
    (void)tiny.fit_rng();
    CHECK(tiny.due(8, 1));
}

namespace {

ShrinkageReport region_shrinkage(Lrps& lrps, const Problem& p, int n_live, int iterations) {
    return shrinkage_test(lrps, p, n_live, iterations, 2024);
}

}  // namespace

TEST_CASE("ellipsoid sampler is unbiased on a gaussian contour") {
    Problem p = gaussian_problem(2, 0.3);
    EllipsoidLrps lrps(99);
    ShrinkageReport rep = region_shrinkage(lrps, p, 100, 300);
    INFO("z = " << rep.z << ", mean ratio " << rep.mean_ratio);
    CHECK(rep.steps_used > 250);
    CHECK_FALSE(rep.biased);
}

TEST_CASE("mlfriends sampler is unbiased on a gaussian contour") {
    Problem p = gaussian_problem(2, 0.3);
    MLFriendsLrps lrps(77);
    ShrinkageReport rep = region_shrinkage(lrps, p, 50, 200);
    INFO("z = " << rep.z << ", mean ratio " << rep.mean_ratio);
    CHECK(rep.steps_used > 150);
    CHECK_FALSE(rep.biased);
}

TEST_CASE("region samplers handle degenerate live sets gracefully") {
    Problem p = gaussian_problem(2, 0.3);
    long evals = 0;
    ProblemRef ref(p, &evals);
    Rng rng(4);
    std::vector<double> u0{0.5, 0.5}, u1{0.5, 0.5};
    std::vector<LivePoint> collapsed{{&u0, 0.0, 1}, {&u1, 0.0, 2}};
    EllipsoidLrps ell(1);
    LrpsDraw d = ell.sample(collapsed, -1.0, ref, 1, rng);
    CHECK_FALSE(d.ok);
    MLFriendsLrps mlf(1);
    LrpsDraw m = mlf.sample(collapsed, -1.0, ref, 1, rng);
    CHECK_FALSE(m.ok);

    std::vector<LivePoint> single{{&u0, 0.0, 1}};
    CHECK_FALSE(ell.sample(single, -1.0, ref, 2, rng).ok);
}
