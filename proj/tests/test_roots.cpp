#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "pwavg/examples.hpp"
#include "pwavg/roots.hpp"

using namespace pwavg;
using Catch::Approx;
using linalg::Vec;

TEST_CASE("grid scan brackets sign changes in one dimension", "[roots]") {
    SECTION("single quadratic zero") {
        roots::VecFn f = [](std::span<const double> a) { return Vec{2.0 * a[0] * a[0] - a[0]}; };
        auto cands = roots::scan_grid(f, {0.1}, {3.0}, 64);
        REQUIRE(cands.size() == 1);
        CHECK(std::abs(cands[0][0] - 0.5) < (3.0 - 0.1) / 63.0);
    }
    SECTION("oscillatory function brackets each zero") {
        roots::VecFn f = [](std::span<const double> a) {
            return Vec{-2.0 * std::sin(a[0]) / a[0]};
        };
        auto cands = roots::scan_grid(f, {0.5}, {7.0}, 64);
        REQUIRE(cands.size() == 2);
        CHECK(std::abs(cands[0][0] - std::numbers::pi) < 0.2);
        CHECK(std::abs(cands[1][0] - 2.0 * std::numbers::pi) < 0.2);
    }
    SECTION("no zeros, empty candidate list") {
        roots::VecFn f = [](std::span<const double>) { return Vec{1.0}; };
        CHECK(roots::scan_grid(f, {0.0}, {1.0}, 16).empty());
    }
    SECTION("resolution precondition") {
        roots::VecFn f = [](std::span<const double>) { return Vec{1.0}; };
        CHECK_THROWS_AS(roots::scan_grid(f, {0.0}, {1.0}, 1), PreconditionError);
    }
}

TEST_CASE("grid scan finds basin minima in two dimensions", "[roots]") {
    roots::VecFn f = [](std::span<const double> a) {
        return Vec{a[0] * a[0] + a[1] * a[1] - 1.0, a[0] - a[1]};
    };
    // zeros at (+-1/sqrt2, +-1/sqrt2)
    auto cands = roots::scan_grid(f, {-2.0, -2.0}, {2.0, 2.0}, 41);
    REQUIRE_FALSE(cands.empty());
    const double s = 1.0 / std::sqrt(2.0);
    bool near_pos = false, near_neg = false;
    for (const Vec& c : cands) {
        if (std::hypot(c[0] - s, c[1] - s) < 0.3) near_pos = true;
        if (std::hypot(c[0] + s, c[1] + s) < 0.3) near_neg = true;
    }
    CHECK(near_pos);
    CHECK(near_neg);
}

TEST_CASE("Newton refinement with certification", "[roots]") {
    SECTION("quadratic with closed-form Jacobian value") {
        roots::VecFn f = [](std::span<const double> a) { return Vec{2.0 * a[0] * a[0] - a[0]}; };
        roots::NewtonOptions opt;
        opt.tol = 1e-9;
        auto cert = roots::newton_refine(f, nullptr, Vec{0.4}, {0.1}, {3.0}, opt);
        CHECK(cert.status == roots::ZeroCertificate::Status::Certified);
        CHECK(std::abs(cert.alpha_star[0] - 0.5) < 1e-9);
        CHECK(cert.det_jacobian == Approx(1.0).epsilon(1e-5));  // 4 a* - 1
        CHECK(cert.residual < 1e-9);
    }
    SECTION("first positive zero of the order-one Bessel function") {
        roots::VecFn f = [](std::span<const double> a) {
            return Vec{std::numbers::pi * examples::bessel_j1(a[0])};
        };
        roots::NewtonOptions opt;
        opt.tol = 1e-9;
        auto cert = roots::newton_refine(f, nullptr, Vec{3.5}, {0.5}, {7.0}, opt);
        CHECK(cert.certified());
        CHECK(std::abs(cert.alpha_star[0] - 3.83171) < 1e-4);
    }
    SECTION("a double zero is flagged degenerate") {
        roots::VecFn f = [](std::span<const double> a) { return Vec{a[0] * a[0]}; };
        roots::NewtonOptions opt;
        opt.tol = 1e-9;
        opt.simple_zero_floor = 1e-2;
        auto cert = roots::newton_refine(f, nullptr, Vec{0.1}, {-1.0}, {1.0}, opt);
        CHECK(cert.status == roots::ZeroCertificate::Status::Degenerate);
        CHECK(cert.residual < 1e-9);
    }
    SECTION("divergence leaves the box and is reported unconverged") {
        // positive and decreasing: Newton pushes right out of the box
        roots::VecFn f = [](std::span<const double> a) { return Vec{std::exp(-a[0])}; };
        auto cert = roots::newton_refine(f, nullptr, Vec{0.5}, {0.0}, {1.0}, {});
        CHECK(cert.status == roots::ZeroCertificate::Status::Unconverged);
    }
}

TEST_CASE("find_zeros deduplicates and orders deterministically", "[roots]") {
    roots::VecFn f = [](std::span<const double> a) {
        return Vec{std::sin(a[0])};  // zeros at pi and 2pi inside [0.5, 7]
    };
    roots::NewtonOptions opt;
    opt.tol = 1e-10;
    auto certs = roots::find_zeros(f, {0.5}, {7.0}, 97, opt);
    REQUIRE(certs.size() == 2);
    CHECK(certs[0].alpha_star[0] == Approx(std::numbers::pi).margin(1e-8));
    CHECK(certs[1].alpha_star[0] == Approx(2.0 * std::numbers::pi).margin(1e-8));
    CHECK(certs[0].certified());
    CHECK(certs[1].certified());
}

TEST_CASE("certified zeros re-evaluate cleanly through a fresh pipeline", "[roots]") {
    model::LoadedModel lm = model::load_system(examples::find_example("fourzone")->config);
    averaging::Engine engine(lm.system);
    lsred::Assembler assembler(engine, lm.chart, {});
    roots::VecFn f = [&](std::span<const double> a) { return assembler.assemble(a, 1).f[0]; };
    roots::NewtonOptions opt;  // engine-backed default tolerance
    auto certs = roots::find_zeros(f, lm.chart.lower, lm.chart.upper, 64, opt);
    REQUIRE(certs.size() == 1);
    REQUIRE(certs[0].certified());
    CHECK(certs[0].alpha_star[0] == Approx(0.5).margin(1e-6));

    // rebuild everything and re-evaluate at the certified point
    model::LoadedModel fresh = model::load_system(examples::find_example("fourzone")->config);
    averaging::Engine engine2(fresh.system);
    lsred::Assembler assembler2(engine2, fresh.chart, {});
    Vec f_again = assembler2.assemble(certs[0].alpha_star, 1).f[0];
    CHECK(linalg::norm_inf(f_again) < 10.0 * opt.tol);
}
