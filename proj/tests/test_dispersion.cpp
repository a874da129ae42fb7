#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <map>

#include "svp/dispersion.hpp"

using namespace svp;
using namespace svp::dispersion;
using equilibria::Family;
using equilibria::make_equilibrium;

namespace {
// Dawson function D(x) = e^{-x^2} int_0^x e^{t^2} dt, by quadrature (test-only)
double dawson(double x) {
    auto gl = gauss_legendre(32, 0.0, x);
    double s = 0;
    for (std::size_t i = 0; i < gl.size(); ++i)
        s += gl.weights[i] * std::exp(gl.nodes[i] * gl.nodes[i]);
    return std::exp(-x * x) * s;
}
}  // namespace

TEST_CASE("mode kernel closed-form values", "[dispersion]") {
    auto mx = make_equilibrium<3>(Family::maxwellian, 1.0, 0.0, 2);
    CHECK(mode_kernel(mx, 1.0, {1, 0, 0}) ==
          Catch::Approx(-0.5 * std::exp(-0.5)).epsilon(1e-13));
    CHECK(mode_kernel(mx, 0.0, {1, 0, 0}) == 0.0);
    CHECK(mode_kernel(mx, 5.0, {0, 0, 0}) == 0.0);

    auto db = make_equilibrium<3>(Family::double_bump, 1.0, 2.0, 2);
    CHECK(mode_kernel(db, 1.0, {1, 0, 0}) ==
          Catch::Approx(-0.5 * std::cos(2.0) * std::exp(-0.5)).epsilon(1e-13));
    // kernel scale: K(t, r e1) = -(r^2/(1+r^2)) t cos(u t r) exp(-(t r)^2/2)
    const double r = 1.7, t = 0.8;
    CHECK(mode_kernel(db, t, {r, 0, 0}) ==
          Catch::Approx(-(r * r / (1 + r * r)) * t * std::cos(2.0 * t * r) *
                        std::exp(-0.5 * t * t * r * r)).epsilon(1e-13));
}

TEST_CASE("transform at tau = 0 matches closed forms", "[dispersion]") {
    auto mx = make_equilibrium<3>(Family::maxwellian, 1.0, 0.0, 2);
    for (double r : {0.5, 1.0, 2.0}) {
        auto res = dispersion_transform(mx, cplx(0, 0), {r, 0, 0});
        CHECK(res.value.real() == Catch::Approx(-1.0 / (1 + r * r)).epsilon(1e-8));
        CHECK(std::abs(res.value.imag()) < 1e-10);
        CHECK(res.tail_bound < 1e-20);
    }
    auto db = make_equilibrium<3>(Family::double_bump, 1.0, 2.0, 2);
    const double r = 1.2;
    const double want = -(1 - std::sqrt(2.0) * 2.0 * dawson(2.0 / std::sqrt(2.0))) /
                        (1 + r * r);
    auto res = dispersion_transform(db, cplx(0, 0), {r, 0, 0});
    CHECK(res.value.real() == Catch::Approx(want).epsilon(1e-8));

    CHECK_THROWS_AS(dispersion_transform(mx, cplx(0, 0.5), {1, 0, 0}),
                    std::invalid_argument);
}

TEST_CASE("transform is stable under grid refinement in the half-plane", "[dispersion]") {
    auto mx = make_equilibrium<3>(Family::maxwellian, 1.0, 0.0, 2);
    const Vec<3> xi{0.8, 0, 0};
    for (cplx tau : {cplx(1.5, 0), cplx(1.5, -0.3), cplx(0, -0.5)}) {
        auto a = dispersion_transform(mx, tau, xi);
        auto b = dispersion_transform(mx, tau, xi, -1, 40000);
        CHECK(std::abs(a.value - b.value) < 1e-9);
    }
}

TEST_CASE("screened maxwellian has positive margin and zero winding", "[dispersion]") {
    auto mx = make_equilibrium<3>(Family::maxwellian, 1.0, 0.0, 2);
    auto grid = log_spaced_octaves(0.25, 4.0, 4);
    auto rep = penrose_margin(mx, grid, TauGrid{20.0, 0.1});
    CHECK(rep.stable);
    CHECK(rep.precision_ok);
    CHECK(rep.margin > 0.05);
    CHECK(rep.margin <= 1.0);
    for (auto& [r, c] : rep.winding) CHECK(c == 0);
    // margin cannot exceed |1 - hat K(0, r_min e1)| = 1 + 1/(1+r_min^2)... it
    // is a min over the grid, so compare against the analytic tau = 0 value
    const double r0 = grid.front();
    CHECK(rep.margin <= 1 + 1.0 / (1 + r0 * r0));
}

TEST_CASE("unit-width double bump stays stable across drifts", "[dispersion]") {
    // margins at default-style grids: u=0: 0.751, u=1: 0.832, u=2: 0.720,
    // u=4: 0.850. Not monotone in u: each stream's resonance lobe weakens
    // under mixing before the two-stream dip forms near z = u/(sigma sqrt 2)
    // = 1.5. The closest approach over this family is at u = 2.
    auto grid = log_spaced_octaves(1.0 / 64, 64.0, 4);
    std::map<double, double> margin;
    for (double u : {0.0, 1.0, 2.0, 4.0}) {
        auto eq = make_equilibrium<3>(Family::double_bump, 1.0, u, 2);
        auto rep = penrose_margin(eq, grid, TauGrid{40.0, 0.1});
        CHECK(rep.stable);
        CHECK(rep.precision_ok);
        CHECK(rep.margin > 0.5);
        margin[u] = rep.margin;
    }
    CHECK(margin[2.0] < margin[1.0]);  // two-stream dip forming
    CHECK(margin[2.0] < margin[4.0]);  // past-peak streams decouple
    // at u = 2 the min sits at tau = 0, r -> 0: |1 - hat K| =
    // 1 - (2 sqrt2 D(sqrt2) - 1)/(1 + r_min^2), Dawson closed form
    const double r0 = grid.front();
    const double want = 1 - (2 * std::sqrt(2.0) * dawson(std::sqrt(2.0)) - 1) / (1 + r0 * r0);
    CHECK(margin[2.0] == Catch::Approx(want).margin(0.01));
}

TEST_CASE("winding detects an unstable double bump", "[dispersion]") {
    // screened two-stream: hat K(0, r) = (2zD(z) - 1)/(sigma^2 (1+r^2)) with
    // z = u/(sigma sqrt 2); the bracket peaks near z = 1.5 at about 0.285, so
    // sigma = 0.3, u = 0.636 puts hat K(0) > 1 for r < 1.47 and a growing
    // mode sits on the negative imaginary axis
    auto eq = make_equilibrium<3>(Family::double_bump, 0.3, 0.636, 2);
    auto grid = log_spaced_octaves(0.25, 1.0, 2);
    auto rep = penrose_margin(eq, grid, TauGrid{20.0, 0.1});
    int total = 0;
    for (auto& [r, c] : rep.winding) total += c;
    CHECK(total > 0);
    CHECK_FALSE(rep.stable);
}
