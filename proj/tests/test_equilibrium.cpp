#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <complex>
#include <random>

#include "svp/equilibrium.hpp"

using namespace svp;
using namespace svp::equilibria;
using cplx = std::complex<double>;

TEST_CASE("maxwellian point values and transform", "[equilibrium]") {
    auto eq = make_equilibrium<3>(Family::maxwellian, 1.0);
    CHECK(eq.density({0, 0, 0}) == Catch::Approx(std::pow(2 * pi, -1.5)).epsilon(1e-14));
    CHECK(eq.fourier({0, 0, 0}) == Catch::Approx(1.0).epsilon(1e-14));
    CHECK(eq.fourier({1, 0, 0}) == Catch::Approx(std::exp(-0.5)).epsilon(1e-14));
    auto g = eq.fourier_gradient({1, 0, 0});
    CHECK(std::abs(g[0] - cplx(0, std::exp(-0.5))) < 1e-14);
    CHECK(std::abs(g[1]) < 1e-14);
    // scale parameter enters through sigma^2 |eta|^2
    auto eqs = make_equilibrium<3>(Family::maxwellian, 0.5, 0.0, 2);
    CHECK(eqs.fourier({2, 0, 0}) == Catch::Approx(std::exp(-0.5)).epsilon(1e-14));
}

TEST_CASE("double bump mixes two drifting maxwellians along axis 0", "[equilibrium]") {
    auto eq = make_equilibrium<3>(Family::double_bump, 1.0, 2.0, 3);
    CHECK(eq.fourier({1, 0, 0}) == Catch::Approx(std::cos(2.0) * std::exp(-0.5)).epsilon(1e-14));
    // transverse direction sees no drift
    CHECK(eq.fourier({0, 1, 0}) == Catch::Approx(std::exp(-0.5)).epsilon(1e-14));
    const double g0 = std::exp(0.0) / std::sqrt(2 * pi);
    const double g4 = std::exp(-8.0) / std::sqrt(2 * pi);
    CHECK(eq.density({2, 0, 0}) ==
          Catch::Approx(0.5 * (g0 + g4) * g0 * g0).epsilon(1e-13));
}

TEST_CASE("velocity quadrature reproduces mass and transform", "[equilibrium]") {
    auto eq = make_equilibrium<3>(Family::double_bump, 1.0, 1.5, 2);
    auto rule = eq.velocity_rule(64);
    const Vec<3> eta{0.7, -0.3, 0.4};
    double mass = 0;
    cplx hat = 0;
    for (std::size_t a = 0; a < rule.size(); ++a)
        for (std::size_t b = 0; b < rule.size(); ++b)
            for (std::size_t c = 0; c < rule.size(); ++c) {
                const Vec<3> v{rule.nodes[a], rule.nodes[b], rule.nodes[c]};
                const double w = rule.weights[a] * rule.weights[b] * rule.weights[c];
                const double mu = eq.density(v);
                mass += w * mu;
                hat += w * mu * std::exp(cplx(0, -dot(v, eta)));
            }
    CHECK(mass == Catch::Approx(1.0).epsilon(1e-8));
    CHECK(std::abs(hat - cplx(eq.fourier(eta), 0)) < 1e-6);
}

TEST_CASE("partial derivatives match finite differences", "[equilibrium]") {
    auto eq = make_equilibrium<3>(Family::double_bump, 0.9, 1.2, 4);
    const Vec<3> v{0.3, -0.2, 0.5};
    const double h = 0.02;

    // d^3/dv0^3 via 5-point stencil on d^2/dv0^2-free evaluations
    auto f0 = [&](double x) { return eq.density({x, v[1], v[2]}); };
    const double fd3 = (-f0(v[0] - 2 * h) + 2 * f0(v[0] - h) - 2 * f0(v[0] + h) +
                        f0(v[0] + 2 * h)) / (2 * h * h * h);
    CHECK(eq.derivative({3, 0, 0}, v) == Catch::Approx(fd3).epsilon(5e-3));

    // mixed d^2/dv0 dv1, Richardson-extrapolated cross stencil
    auto fm = [&](double x, double y) { return eq.density({x, y, v[2]}); };
    auto cross = [&](double s) {
        return (fm(v[0] + s, v[1] + s) - fm(v[0] + s, v[1] - s) -
                fm(v[0] - s, v[1] + s) + fm(v[0] - s, v[1] - s)) / (4 * s * s);
    };
    const double fdm = (4 * cross(h / 2) - cross(h)) / 3;
    CHECK(eq.derivative({1, 1, 0}, v) == Catch::Approx(fdm).epsilon(1e-6));

    CHECK_THROWS_AS(eq.derivative({5, 0, 0}, v), std::invalid_argument);
}

TEST_CASE("weighted decay bounds hold on random samples", "[equilibrium]") {
    auto eq = make_equilibrium<3>(Family::double_bump, 1.0, 2.0, 3);
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> uni(-6, 6);
    std::vector<Vec<3>> samples;
    for (int i = 0; i < 400; ++i) samples.push_back({uni(rng), uni(rng), uni(rng)});
    samples.push_back({2, 0, 0});
    samples.push_back({-2, 0, 0});
    samples.push_back({0, 0, 0});
    for (int m = 0; m <= 3; ++m)
        for (int M : {2, 4, 6}) {
            auto chk = verify_decay_bound(eq, m, M, samples);
            INFO("m=" << m << " M=" << M << " worst=" << chk.worst
                      << " C=" << chk.constant);
            CHECK(chk.holds);
            CHECK(chk.constant > 0);
        }
    CHECK_THROWS_AS(eq.decay_constant(2, 99), std::invalid_argument);
}

TEST_CASE("constructor validates parameters", "[equilibrium]") {
    CHECK_THROWS_AS(make_equilibrium<3>(Family::maxwellian, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(make_equilibrium<3>(Family::double_bump, 1.0, -1.0), std::invalid_argument);
    // maxwellian ignores the drift parameter
    auto eq = make_equilibrium<2>(Family::maxwellian, 1.0, 3.0, 2);
    CHECK(eq.u == 0.0);
}
