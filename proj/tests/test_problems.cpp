#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "nestkit/lrps.hpp"
#include "nestkit/problems.hpp"
#include "nestkit/rng.hpp"

using namespace nestkit;
using Catch::Matchers::WithinAbs;

TEST_CASE("gaussian problem evidence matches quadrature") {
    CHECK_THAT(gaussian_problem(2, 0.01).analytic_log_z.value(), WithinAbs(-8.75875766669, 1e-9));
    CHECK_THAT(gaussian_problem(2, 0.3).analytic_log_z.value(), WithinAbs(-1.95807988149, 1e-9));
    CHECK_THAT(gaussian_problem(4, 0.1).analytic_log_z.value(), WithinAbs(-8.3071749614, 1e-9));
    CHECK_THROWS_AS(gaussian_problem(2, 0.0), invalid_argument);
}

TEST_CASE("gaussian contour geometry is consistent") {
    Problem p = gaussian_problem(3, 0.2);
    long evals = 0;
    ProblemRef ref(p, &evals);
    // logL at the center of the cube is 0; likelihood falls with radius.
    std::vector<double> phys;
    double l_center = ref.log_l_unit({0.5, 0.5, 0.5}, &phys);
    CHECK_THAT(l_center, WithinAbs(0.0, 1e-12));
    CHECK_THAT(phys[0], WithinAbs(0.0, 1e-12));
    CHECK(evals == 1);

    // Volumes shrink monotonically with the threshold.
    double x1 = p.volume_at_log_l(-8.0);
    double x2 = p.volume_at_log_l(-2.0);
    CHECK(x1 > x2);
    CHECK(x2 > 0.0);
    CHECK(p.volume_at_log_l(0.0) == 0.0);
    CHECK(std::isnan(p.volume_at_log_l(-1e6)));  // ball pokes out of the box

    // Contour draws respect the threshold.
    Rng rng(4);
    const double threshold = -2.0;
    for (int i = 0; i < 200; ++i) {
        std::vector<double> u = p.sample_contour(threshold, rng);
        REQUIRE_FALSE(u.empty());
        CHECK(ref.log_l_unit(u) > threshold);
    }
    CHECK(p.sample_contour(1.0, rng).empty());
}

TEST_CASE("constant problem is flat everywhere") {
    Problem p = constant_problem(3);
    long evals = 0;
    ProblemRef ref(p, &evals);
    Rng rng(1);
    CHECK(ref.log_l_unit(rng.unit_cube(3)) == 0.0);
    CHECK(p.analytic_log_z.value() == 0.0);
    CHECK(p.volume_at_log_l(-1.0) == 1.0);
    CHECK(p.sample_contour(0.0, rng).empty());
    CHECK(p.sample_contour(-0.5, rng).size() == 3);
}

TEST_CASE("hyper-rectangle contours are boxes") {
    Problem p = hyper_rectangle_problem(2);
    long evals = 0;
    ProblemRef ref(p, &evals);
    CHECK_THAT(ref.log_l_unit({0.9, 0.5}), WithinAbs(-std::log(0.4), 1e-12));
    CHECK_THAT(p.volume_at_log_l(-std::log(0.25)), WithinAbs(0.25, 1e-12));
    CHECK(p.volume_at_log_l(-std::log(0.6)) == 1.0);
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> u = p.sample_contour(std::log(5.0), rng);  // half-width 0.2
        CHECK(ref.log_l_unit(u) > std::log(5.0));
    }
    // The exact-volume identity LRPS calibration relies on: X(logL(u)) is
    // uniform when u is uniform.
    Problem p4 = hyper_rectangle_problem(4);
    ProblemRef ref4(p4, &evals);
    Rng rng2(3);
    double mean_x = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) mean_x += p4.volume_at_log_l(ref4.log_l_unit(rng2.unit_cube(4)));
    CHECK_THAT(mean_x / n, WithinAbs(0.5, 0.015));
}

TEST_CASE("heavy-tail problem has Z = 101 with a hard cap") {
    Problem p = heavy_tail_problem();
    long evals = 0;
    ProblemRef ref(p, &evals);
    CHECK_THAT(p.analytic_log_z.value(), WithinAbs(std::log(101.0), 1e-14));
    CHECK(ref.log_l_unit({1e-200}) == 100.0);
    CHECK_THAT(ref.log_l_unit({0.25}), WithinAbs(std::log(4.0), 1e-12));
    CHECK(p.volume_at_log_l(100.0) == 0.0);
    CHECK_THAT(p.volume_at_log_l(50.0), WithinAbs(std::exp(-50.0), 1e-60));
    CHECK(p.volume_at_log_l(-5.0) == 1.0);
    Rng rng(6);
    CHECK(p.sample_contour(100.0, rng).empty());
    for (int i = 0; i < 100; ++i) CHECK(ref.log_l_unit(p.sample_contour(std::log(4.0), rng)) > std::log(4.0));
}

TEST_CASE("step plateau problem has two exact levels") {
    Problem p = step_plateau_problem();
    long evals = 0;
    ProblemRef ref(p, &evals);
    CHECK(ref.log_l_unit({0.3}) == 0.0);
    CHECK(ref.log_l_unit({0.7}) == std::log(2.0));
    CHECK_THAT(p.analytic_log_z.value(), WithinAbs(std::log(1.5), 1e-14));
    CHECK(p.volume_at_log_l(-0.1) == 1.0);
    CHECK(p.volume_at_log_l(0.0) == 0.5);
    CHECK(p.volume_at_log_l(std::log(2.0)) == 0.0);
    Rng rng(8);
    CHECK(p.sample_contour(std::log(2.0), rng).empty());
    for (int i = 0; i < 50; ++i) CHECK(ref.log_l_unit(p.sample_contour(0.0, rng)) == std::log(2.0));
    CHECK(p.sample_contour(-3.0, rng).size() == 1);
}

TEST_CASE("gaussian shell evidence formula in two dimensions") {
    Problem p = gaussian_shell_problem(0.3, 0.01, 2);
    REQUIRE(p.analytic_log_z.has_value());
    CHECK_THAT(p.analytic_log_z.value(),
               WithinAbs(std::log(2.0 * std::numbers::pi * 0.3 * 0.1) - 2.0 * std::log(2.0), 1e-12));
    // Likelihood peaks on the ring.
    long evals = 0;
    ProblemRef ref(p, &evals);
    double on_ring = ref.log_l_unit({(0.3 + 1.0) / 2.0, 0.5});
    double off_ring = ref.log_l_unit({(0.6 + 1.0) / 2.0, 0.5});
    CHECK(on_ring > off_ring);
    // No analytic value when the ring leaks outside the box.
    CHECK_FALSE(gaussian_shell_problem(0.95, 0.01, 2).analytic_log_z.has_value());
    CHECK_FALSE(gaussian_shell_problem(0.3, 0.01, 3).analytic_log_z.has_value());
}

TEST_CASE("diamond ring likelihood is finite across scales") {
    Problem p = diamond_ring_problem();
    long evals = 0;
    ProblemRef ref(p, &evals);
    CHECK_THAT(p.analytic_log_z.value(), WithinAbs(-37.6653168755, 1e-9));
    CHECK(std::isfinite(ref.log_l_unit({0.9, 0.9})));
    // On the main ring the likelihood is large; far away it is tiny but finite.
    double far = ref.log_l_unit({0.99, 0.01});
    double near = ref.log_l_unit({0.5 + 0.5e-11, 0.5});
    CHECK(near > far);
    CHECK(std::isfinite(far));
    CHECK_FALSE(static_cast<bool>(p.sample_contour));
    CHECK_FALSE(static_cast<bool>(p.volume_at_log_l));
}

TEST_CASE("oracle and rejection samplers honor the threshold") {
    Problem p = gaussian_problem(2, 0.3);
    long evals = 0;
    ProblemRef ref(p, &evals);
    Rng rng(12);
    OracleLrps oracle;
    LrpsDraw d = oracle.sample({}, -2.0, ref, 1, rng);
    REQUIRE(d.ok);
    CHECK(d.logl > -2.0);
    CHECK(d.unit.size() == 2);
    CHECK(d.physical.size() == 2);
    CHECK(d.evals >= 1);

    RejectionCubeLrps cube(100000);
    LrpsDraw c = cube.sample({}, -2.0, ref, 1, rng);
    REQUIRE(c.ok);
    CHECK(c.logl > -2.0);

    // Nothing above the cap: a clean efficiency failure, not an error.
    Problem heavy = heavy_tail_problem();
    ProblemRef href(heavy, &evals);
    LrpsDraw none = oracle.sample({}, 100.0, href, 1, rng);
    CHECK_FALSE(none.ok);

    Problem ring = diamond_ring_problem();
    ProblemRef rref(ring, &evals);
    CHECK_THROWS_AS(oracle.sample({}, 0.0, rref, 1, rng), invalid_argument);
}
