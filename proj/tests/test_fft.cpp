#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "svp/fft.hpp"

using namespace svp;

TEST_CASE("1-D box transforms a Gaussian to its continuum transform", "[fft]") {
    SpectralBox<1> box{32.0, 128};
    std::vector<cplx> f(box.size());
    for (int j = 0; j < box.n; ++j) {
        const double x = box.x({j})[0];
        f[j] = std::exp(-0.5 * x * x);
    }
    auto g = f;
    box.forward(g);
    for (int k = 0; k < box.n; ++k) {
        const double xi = box.xi({k})[0];
        if (std::abs(xi) > 6) continue;
        const double want = std::sqrt(2 * pi) * std::exp(-0.5 * xi * xi);
        CHECK(std::abs(g[k] - cplx(want, 0)) < 1e-10);
    }
    box.backward(g);
    for (int j = 0; j < box.n; ++j) CHECK(std::abs(g[j] - f[j]) < 1e-12);
}

TEST_CASE("3-D roundtrip and Parseval", "[fft]") {
    SpectralBox<3> box{12.0, 24};
    std::vector<cplx> f(box.size());
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> uni(-1, 1);
    for (auto& c : f) c = cplx(uni(rng), uni(rng));
    auto g = f;
    box.forward(g);

    double phys = 0, spec = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        phys += std::norm(f[i]);
        spec += std::norm(g[i]);
    }
    phys *= std::pow(box.h(), 3);
    spec /= std::pow(box.L, 3);
    CHECK(phys == Catch::Approx(spec).epsilon(1e-12));

    box.backward(g);
    double worst = 0;
    for (std::size_t i = 0; i < f.size(); ++i) worst = std::max(worst, std::abs(g[i] - f[i]));
    CHECK(worst < 1e-12);
}

TEST_CASE("3-D Gaussian transform and spectral derivative", "[fft]") {
    SpectralBox<3> box{12.0, 24};
    auto ti = box.indexer();
    std::vector<cplx> f(box.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        auto x = box.x(ti.decode(i));
        f[i] = std::exp(-0.5 * dot(x, x));
    }
    auto g = f;
    box.forward(g);
    const double c = std::pow(2 * pi, 1.5);
    for (std::size_t i = 0; i < g.size(); ++i) {
        auto xi = box.xi(ti.decode(i));
        const double q = dot(xi, xi);
        if (q > 25) continue;
        CHECK(std::abs(g[i] - cplx(c * std::exp(-0.5 * q), 0)) < 2e-7);
    }
    // d/dx0 via i xi_0 multiplier
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= cplx(0, box.xi(ti.decode(i))[0]);
    box.backward(g);
    double worst = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        auto x = box.x(ti.decode(i));
        worst = std::max(worst, std::abs(g[i] - (-x[0]) * f[i]));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("radial 3-D transform pair on a Gaussian", "[fft]") {
    auto rule = trapezoid_rule(0.0, 12.0, 1201);
    std::vector<double> fR(rule.size());
    for (std::size_t i = 0; i < rule.size(); ++i)
        fR[i] = std::exp(-0.5 * rule.nodes[i] * rule.nodes[i]);
    const double c = std::pow(2 * pi, 1.5);
    for (double r : {0.0, 0.5, 1.0, 2.0, 4.0}) {
        const double want = c * std::exp(-0.5 * r * r);
        CHECK(radial_fourier_3d(rule, fR, r) == Catch::Approx(want).margin(1e-8));
    }
    // inverse applied to the forward values recovers the profile
    std::vector<double> fr(rule.size());
    for (std::size_t i = 0; i < rule.size(); ++i)
        fr[i] = c * std::exp(-0.5 * rule.nodes[i] * rule.nodes[i]);
    for (double R : {0.0, 0.7, 1.5, 3.0})
        CHECK(radial_fourier_3d_inverse(rule, fr, R) ==
              Catch::Approx(std::exp(-0.5 * R * R)).margin(1e-8));
}
