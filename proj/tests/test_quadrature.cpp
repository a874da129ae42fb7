#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "svp/quadrature.hpp"

using namespace svp;

namespace {
double apply(const Rule1D& r, double (*f)(double)) {
    double s = 0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r.weights[i] * f(r.nodes[i]);
    return s;
}
}  // namespace

TEST_CASE("gauss_legendre integrates degree 2n-1 exactly", "[quadrature]") {
    auto r = gauss_legendre(5);
    // odd powers vanish on [-1,1]; x^8 is the highest even power below 2n-1=9
    double s8 = 0, s0 = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        s0 += r.weights[i];
        s8 += r.weights[i] * std::pow(r.nodes[i], 8);
    }
    CHECK(s0 == Catch::Approx(2.0).epsilon(1e-14));
    CHECK(s8 == Catch::Approx(2.0 / 9).epsilon(1e-13));

    auto m = gauss_legendre(4, 1.0, 3.0);
    double s3 = 0;
    for (std::size_t i = 0; i < m.size(); ++i) s3 += m.weights[i] * std::pow(m.nodes[i], 3);
    CHECK(s3 == Catch::Approx((81.0 - 1.0) / 4).epsilon(1e-13));
}

TEST_CASE("gauss_hermite matches Gaussian moments", "[quadrature]") {
    auto r = gauss_hermite(8);
    double m0 = 0, m2 = 0, m4 = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        m0 += r.weights[i];
        m2 += r.weights[i] * r.nodes[i] * r.nodes[i];
        m4 += r.weights[i] * std::pow(r.nodes[i], 4);
    }
    const double sp = std::sqrt(pi);
    CHECK(m0 == Catch::Approx(sp).epsilon(1e-13));
    CHECK(m2 == Catch::Approx(sp / 2).epsilon(1e-13));
    CHECK(m4 == Catch::Approx(3 * sp / 4).epsilon(1e-13));
}

TEST_CASE("gauss_hermite_for_gaussian integrates gaussian-weighted data", "[quadrature]") {
    // the open rule targets integrands f ~ exp(-(x-c)^2/(2 sigma^2)) * smooth
    const double sigma = 0.7, c = 1.3;
    auto r = gauss_hermite_for_gaussian(12, sigma, c);
    auto gauss = [&](double x) { return std::exp(-0.5 * (x - c) * (x - c) / (sigma * sigma)); };
    double mass = 0, var = 0, expint = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double x = r.nodes[i], w = r.weights[i] * gauss(x);
        mass += w;
        var += w * (x - c) * (x - c);
        expint += w * std::exp(-(x - c));
    }
    const double m = sigma * std::sqrt(2 * pi);
    CHECK(mass == Catch::Approx(m).epsilon(1e-12));
    CHECK(var == Catch::Approx(sigma * sigma * m).epsilon(1e-12));
    // int e^{-(x-c)} exp(-(x-c)^2/(2 s^2)) dx = m e^{s^2/2}
    CHECK(expint == Catch::Approx(m * std::exp(0.5 * sigma * sigma)).epsilon(1e-9));
}

TEST_CASE("trapezoid is spectrally accurate on rapidly decaying data", "[quadrature]") {
    auto r = trapezoid_rule(-8.0, 8.0, 129);
    CHECK(apply(r, [](double x) { return std::exp(-0.5 * x * x); }) ==
          Catch::Approx(std::sqrt(2 * pi)).epsilon(1e-12));
}

TEST_CASE("graded_gl resolves an algebraic tail", "[quadrature]") {
    auto r = graded_gl(0.0, 40.0, {0.5, 1, 2, 5, 10, 20}, 10);
    const double got = apply(r, [](double t) { return std::pow(1 + t, -4.0); });
    const double want = (1 - std::pow(41.0, -3.0)) / 3;
    CHECK(got == Catch::Approx(want).epsilon(1e-12));
    // panels clip to the requested interval
    auto clipped = graded_gl(3.0, 4.0, {0.5, 1, 2, 5, 10, 20}, 6);
    double mass = 0;
    for (double w : clipped.weights) mass += w;
    CHECK(mass == Catch::Approx(1.0).epsilon(1e-13));
}
