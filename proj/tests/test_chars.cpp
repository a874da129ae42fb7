#include <cmath>
#include <functional>
#include <random>

#include <catch2/catch_amalgamated.hpp>

#include "svp/characteristics.hpp"

using namespace svp;
using namespace svp::chars;
using V3 = Vec<3>;

namespace {

double simpson(double a, double b, int n, const std::function<double(double)>& f) {
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + (b - a) * i / n) * (i % 2 ? 4 : 2);
    return s * (b - a) / (3 * n);
}

// backward RK4 for dX/ds = V, dV/ds = E(s, X), from s = t down to starget
std::pair<V3, V3> integrate_back(const ForceField<3>& f, double t, V3 x, V3 v, double starget,
                                 int nsteps) {
    double s = t;
    const double h = (starget - t) / nsteps;
    for (int i = 0; i < nsteps; ++i) {
        const V3 k1x = v, k1v = f.value(s, x);
        V3 x2, v2;
        for (int c = 0; c < 3; ++c) {
            x2[c] = x[c] + h / 2 * k1x[c];
            v2[c] = v[c] + h / 2 * k1v[c];
        }
        const V3 k2x = v2, k2v = f.value(s + h / 2, x2);
        V3 x3, v3;
        for (int c = 0; c < 3; ++c) {
            x3[c] = x[c] + h / 2 * k2x[c];
            v3[c] = v[c] + h / 2 * k2v[c];
        }
        const V3 k3x = v3, k3v = f.value(s + h / 2, x3);
        V3 x4, v4;
        for (int c = 0; c < 3; ++c) {
            x4[c] = x[c] + h * k3x[c];
            v4[c] = v[c] + h * k3v[c];
        }
        const V3 k4x = v4, k4v = f.value(s + h, x4);
        for (int c = 0; c < 3; ++c) {
            x[c] += h / 6 * (k1x[c] + 2 * k2x[c] + 2 * k3x[c] + k4x[c]);
            v[c] += h / 6 * (k1v[c] + 2 * k2v[c] + 2 * k3v[c] + k4v[c]);
        }
        s += h;
    }
    return {x, v};
}

}  // namespace

TEST_CASE("characteristics input validation and zero field", "[chars]") {
    ZeroField<3> z;
    CHECK_THROWS_AS(solve_point<3>(z, -1.0, V3{}, V3{}), std::invalid_argument);
    CHECK_THROWS_AS(solve_point<3>(z, 2.0, V3{}, V3{}, 0.0), std::invalid_argument);

    auto p = solve_point<3>(z, 5.0, {0.3, -1.0, 0.2}, {0.5, 0.0, -0.7});
    CHECK(p.iterations == 1);
    for (double s : {0.0, 2.2, 4.9}) {
        for (int c = 0; c < 3; ++c) {
            CHECK(p.Y(s)[c] == 0.0);
            CHECK(p.W(s)[c] == 0.0);
        }
    }

    // with no force the straightening is the identity and flow is free transport
    CharacteristicsSolution<3> sol(z, 5.0, {0.0}, {0.0});
    const V3 x{0.7, -0.2, 1.4}, v{0.3, 0.1, -0.6};
    const V3 psi = sol.straighten(1.0, x, v);
    const V3 xr = sol.position(1.0, x, v);
    for (int c = 0; c < 3; ++c) {
        CHECK(psi[c] == Catch::Approx(v[c]).margin(1e-14));
        CHECK(xr[c] == Catch::Approx(x[c] - 4.0 * v[c]).margin(1e-14));
    }
}

TEST_CASE("constant field closed forms", "[chars]") {
    const V3 e0{0.4, -0.2, 0.1};
    AnalyticField<3> f([&](double, const V3&) { return e0; });
    const double t = 7;
    auto p = solve_point<3>(f, t, {0.3, 0.0, -1.0}, {0.5, -0.2, 0.0});
    CHECK(p.iterations <= 3);
    for (double s : {0.0, 2.5, 6.9}) {
        for (int c = 0; c < 3; ++c) {
            CHECK(p.Y(s)[c] == Catch::Approx(e0[c] * (t - s) * (t - s) / 2).margin(1e-12));
            CHECK(p.W(s)[c] == Catch::Approx(-e0[c] * (t - s)).margin(1e-12));
        }
    }

    // phi = -e0 (t-s)/2 and the straightened label v + e0 (t-s)/2
    const V3 e1{0.05, -0.02, 0.03};
    AnalyticField<3> g([&](double, const V3&) { return e1; });
    const double tc = 4;
    CharacteristicsSolution<3> sol(g, tc, {0.0}, {0.0});
    const V3 x{0.7, -0.3, 1.1}, v{0.2, -0.1, 0.4};
    for (double s : {0.0, 1.3, 3.5}) {
        const V3 ph = sol.phi(s, x, v);
        const V3 ps = sol.straighten(s, x, v);
        for (int c = 0; c < 3; ++c) {
            CHECK(ph[c] == Catch::Approx(-e1[c] * (tc - s) / 2).margin(1e-12));
            CHECK(ps[c] == Catch::Approx(v[c] + e1[c] * (tc - s) / 2).margin(1e-12));
        }
    }
    // boundary convention: everything vanishes at s = t
    for (int c = 0; c < 3; ++c) {
        CHECK(sol.phi(tc, x, v)[c] == 0.0);
        CHECK(sol.straighten(tc, x, v)[c] == v[c]);
    }
}

TEST_CASE("decaying uniform field closed forms", "[chars]") {
    // E(s) = e0 (1+s)^-4 uniform in x: Y and W integrate in closed form
    const V3 e0{1.0, -0.5, 0.25};
    AnalyticField<3> f([&](double s, const V3&) {
        V3 r;
        for (int c = 0; c < 3; ++c) r[c] = e0[c] * std::pow(1 + s, -4);
        return r;
    });
    const double t = 6;
    auto p = solve_point<3>(f, t, {0.0, 0.0, 0.0}, {1.0, 0.0, 0.0});
    for (double s : {0.0, 1.7, 4.2}) {
        const double i1 = -(t - s) / (3 * std::pow(1 + t, 3)) +
                          (std::pow(1 + s, -2) - std::pow(1 + t, -2)) / 6;
        const double i0 = (std::pow(1 + s, -3) - std::pow(1 + t, -3)) / 3;
        for (int c = 0; c < 3; ++c) {
            CHECK(p.Y(s)[c] == Catch::Approx(e0[c] * i1).margin(1e-6));
            CHECK(p.W(s)[c] == Catch::Approx(-e0[c] * i0).margin(1e-5));
        }
    }
}

TEST_CASE("reconstruction matches direct backward integration", "[chars]") {
    const double eps = 1e-2, t = 12;
    SaturatingField<3> f(eps);
    CharacteristicsSolution<3> sol(f, t, {0.0}, {0.0});
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> ux(-2, 2), uv(-1, 1), us(0, 0.95 * t);
    double worst = 0;
    for (int i = 0; i < 50; ++i) {
        const V3 x{ux(rng), ux(rng), ux(rng)}, v{uv(rng), uv(rng), uv(rng)};
        const double s = us(rng);
        const int nsteps = std::max(10, static_cast<int>((t - s) / 0.002));
        const auto [xo, vo] = integrate_back(f, t, x, v, s, nsteps);
        const V3 xr = sol.position(s, x, v), vr = sol.velocity(s, x, v);
        for (int c = 0; c < 3; ++c)
            worst = std::max({worst, std::abs(xo[c] - xr[c]), std::abs(vo[c] - vr[c])});
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("derivative stacks inherit the field decay envelope", "[chars]") {
    const double eps = 1e-2, t = 12;
    SaturatingField<3> f(eps);
    auto sol = picard_solve_characteristics<3>(f, t, {-1.5, 1.5}, {-0.6, 0.6});
    CHECK(sol.max_iterations() <= 10);

    // measured sup / envelope, envelope eps log(2+s) (1+s)^-(d-2) resp. -(d-1)
    auto rep = characteristics_decay_report(sol, 3, {0.0, 1.0, 3.0, 6.0, 11.5}, eps);
    for (int k = 0; k <= 3; ++k) {
        CHECK(rep.ratio_Y[k] < 10.0);
        CHECK(rep.ratio_W[k] < 10.0);
        CHECK(rep.ratio_Y[k] > 0.05);
        CHECK(rep.ratio_W[k] > 0.05);
    }
    CHECK(rep.ratio_gradx < 10.0);
    CHECK(rep.ratio_gradx > 0.05);
    // regression windows around the measured ratios
    CHECK(rep.ratio_Y[0] == Catch::Approx(0.816).epsilon(0.25));
    CHECK(rep.ratio_W[0] == Catch::Approx(0.618).epsilon(0.25));
    CHECK(rep.ratio_Y[3] == Catch::Approx(0.245).epsilon(0.30));
    CHECK(rep.ratio_W[3] == Catch::Approx(0.210).epsilon(0.30));

    // mixed v-stacks of this componentwise field vanish identically, so the
    // order-3 scan must flag sub-floor magnitudes; pure stacks through order 1
    // carry genuine signal and must not
    CHECK(rep.precision_warning);
    auto rep1 = characteristics_decay_report(sol, 1, {0.0, 1.0, 3.0, 6.0, 11.5}, eps);
    CHECK_FALSE(rep1.precision_warning);

    // sup_Y decays along s at every order
    for (int k = 0; k <= 3; ++k)
        for (std::size_t i = 1; i < rep.s.size(); ++i)
            CHECK(rep.sup_Y[k][i] < rep.sup_Y[k][i - 1]);
}

TEST_CASE("deviations scale linearly in the field strength", "[chars]") {
    const double eps = 1e-2, t = 12;
    SaturatingField<3> f1(eps), f2(2 * eps);
    auto s1 = picard_solve_characteristics<3>(f1, t, {0.5}, {0.3});
    auto s2 = picard_solve_characteristics<3>(f2, t, {0.5}, {0.3});
    auto r1 = characteristics_decay_report(s1, 0, {0.0, 2.0, 6.0}, eps);
    auto r2 = characteristics_decay_report(s2, 0, {0.0, 2.0, 6.0}, 2 * eps);
    for (std::size_t q = 0; q < 3; ++q) {
        CHECK(r2.sup_Y[0][q] / r1.sup_Y[0][q] == Catch::Approx(2.0).epsilon(0.05));
        CHECK(r2.sup_W[0][q] / r1.sup_W[0][q] == Catch::Approx(2.0).epsilon(0.05));
    }
}

TEST_CASE("order-2 derivative identity for a coupled field", "[chars]") {
    // E_m = eps (1+s)^-3 cos(al y_m + be y_{m+1 mod 3}) couples components,
    // so mixed v-derivatives are genuinely nonzero
    const double eps = 1e-2, al = 0.9, be = 0.4, t = 5;
    auto amp = [&](double s) { return eps * std::pow(1 + s, -3); };
    AnalyticField<3> f([&](double s, const V3& y) {
        V3 r;
        for (int m = 0; m < 3; ++m) r[m] = amp(s) * std::cos(al * y[m] + be * y[(m + 1) % 3]);
        return r;
    });
    auto gcoef = [&](int m, int a) {
        return (a == m ? al : 0.0) + (a == (m + 1) % 3 ? be : 0.0);
    };

    auto sol = picard_solve_characteristics<3>(f, t, {0.3}, {-0.2}, 1e-11, 0.05);
    typename CharacteristicsSolution<3>::Cache scratch;
    const V3 w{0.3, 0.3, 0.3}, v{-0.2, -0.2, -0.2};
    const double s = 0.5;

    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j)
            for (int m = 0; m < 3; ++m) {
                std::array<int, 3> mu{};
                mu[i] += 1;
                mu[j] += 1;
                const double lhs = sol.grad_v(s, w, v, mu, true, &scratch)[m];
                // d2Y = int (tau-s) [ E'' (tau e_i + dY_i)(tau e_j + dY_j) + E' d2Y ]
                const double rhs = simpson(s, t, 120, [&](double tau) {
                    const V3 y = sol.deviation_Y(tau, w, v);
                    V3 z = axpy(tau, v, w);
                    for (int c = 0; c < 3; ++c) z[c] += y[c];
                    const double arg = al * z[m] + be * z[(m + 1) % 3];
                    const double d1 = -amp(tau) * std::sin(arg);
                    const double d2 = -amp(tau) * std::cos(arg);
                    std::array<int, 3> ei{}, ej{};
                    ei[i] = 1;
                    ej[j] = 1;
                    const V3 dyi = sol.grad_v(tau, w, v, ei, true, &scratch);
                    const V3 dyj = sol.grad_v(tau, w, v, ej, true, &scratch);
                    const V3 d2y = sol.grad_v(tau, w, v, mu, true, &scratch);
                    double sum = 0;
                    for (int a = 0; a < 3; ++a) {
                        const double pia = (a == i ? tau : 0.0) + dyi[a];
                        for (int b = 0; b < 3; ++b)
                            sum += d2 * gcoef(m, a) * gcoef(m, b) * pia *
                                   ((b == j ? tau : 0.0) + dyj[b]);
                        sum += d1 * gcoef(m, a) * d2y[a];
                    }
                    return (tau - s) * sum;
                });
                CHECK(std::abs(lhs - rhs) <= 0.05 * std::abs(lhs) + 5e-9);
            }
}

TEST_CASE("straightening inverts the deviation at the free transport label", "[chars]") {
    const double eps = 1e-2, t = 12;
    SaturatingField<3> f(eps);
    CharacteristicsSolution<3> sol(f, t, {0.0}, {0.0});
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> ux(-2, 2), uv(-1, 1), us(0, t);
    for (int i = 0; i < 20; ++i) {
        const V3 x{ux(rng), ux(rng), ux(rng)}, v{uv(rng), uv(rng), uv(rng)};
        const double s = us(rng);
        const V3 psi = sol.straighten(s, x, v);
        const V3 xr = sol.position(s, x, psi);
        const double bound = simpson(s, t, 400, [&](double tau) { return f.amplitude(tau); });
        for (int c = 0; c < 3; ++c) {
            // X(s, x, psi) = x - (t-s) v to the Newton tolerance
            CHECK(std::abs(xr[c] - (x[c] - (t - s) * v[c])) < 1e-8);
            // |phi| <= int_s^t sup|E| and |psi - v| <= same bound / (1 - 1/2)
            CHECK(std::abs(sol.phi(s, x, v)[c]) <= bound);
            CHECK(std::abs(psi[c] - v[c]) <= 2 * bound);
        }
        // the label map is measure preserving to first order in the field
        const double h = 1e-4;
        std::array<std::array<double, 3>, 3> jac{};
        for (int a = 0; a < 3; ++a) {
            V3 vp = v, vm = v;
            vp[a] += h;
            vm[a] -= h;
            const V3 pp = sol.straighten(s, x, vp), pm = sol.straighten(s, x, vm);
            for (int c = 0; c < 3; ++c) jac[c][a] = (pp[c] - pm[c]) / (2 * h);
        }
        const double det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1]) -
                           jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0]) +
                           jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
        CHECK(std::abs(det - 1) < 1e-3);
    }

    // straighten_map mirrors the member and the sup of |phi| decays in s
    const V3 x0{1.0, -0.5, 0.2}, v0{0.1, 0.3, -0.2};
    const V3 a = sol.straighten(2.0, x0, v0), b = straighten_map(sol, 2.0, x0, v0);
    for (int c = 0; c < 3; ++c) CHECK(a[c] == b[c]);
    auto sup = phi_field(sol, {0.0, 3.0, 6.0, 11.0});
    for (std::size_t i = 1; i < sup.size(); ++i) CHECK(sup[i] < sup[i - 1]);
    CHECK(sup[0] <= simpson(0, t, 400, [&](double tau) { return f.amplitude(tau); }));
}

TEST_CASE("divergence and invertibility guards", "[chars]") {
    // amplification far beyond the contraction regime
    AnalyticField<3> strong([](double, const V3& y) {
        V3 r;
        for (int m = 0; m < 3; ++m) r[m] = 40.0 * std::sin(y[m]);
        return r;
    });
    CHECK_THROWS_AS(solve_point<3>(strong, 6.0, V3{0.3, -0.1, 0.2}, V3{0.4, 0.0, -0.2}),
                    std::runtime_error);

    // converges, but |grad_v Phi| >= 1/2: straightening refuses to certify
    AnalyticField<3> stiff([](double, const V3& y) {
        V3 r;
        for (int m = 0; m < 3; ++m) r[m] = 1.4 * std::cos(y[m]);
        return r;
    });
    CharacteristicsSolution<3> sol(stiff, 2.0, {0.0}, {0.0}, 1e-10, 0.05);
    CHECK_THROWS_WITH(sol.straighten(0.0, V3{1.2, -0.4, 0.7}, V3{0.1, 0.2, -0.3}),
                      Catch::Matchers::ContainsSubstring("not certified invertible"));
}

TEST_CASE("field history validation and interpolation", "[chars]") {
    using FH = FieldHistory<3>;
    CHECK_THROWS_AS(FH(0, 0.5, 0, -1, 0.5, 5, {}), std::invalid_argument);
    CHECK_THROWS_AS(FH(0, 0.5, 2, -1, 0.5, 1, {}), std::invalid_argument);
    CHECK_THROWS_AS(FH(0, -0.5, 2, -1, 0.5, 5, {}), std::invalid_argument);
    CHECK_THROWS_AS(FH(0, 0.5, 2, -1, 0.5, 5, std::vector<double>(7)), std::invalid_argument);
    {
        std::vector<double> bad(2 * 125 * 3, 0.0);
        bad[17] = std::nan("");
        CHECK_THROWS_AS(FH(0, 0.5, 2, -1, 0.5, 5, bad), std::invalid_argument);
    }

    // tricubic per axis, linear in t: exact on quadratics with linear ramp
    AnalyticField<3> quad([](double s, const V3& y) {
        return V3{(1 + 2 * s) * (y[0] * y[0] - 2 * y[1] + y[2]),
                  (1 + 2 * s) * (y[1] * y[2] + 3),
                  (1 + 2 * s) * (-y[0] + 0.5 * y[2] * y[2])};
    });
    auto hist = FH::sample(quad, 0, 0.5, 7, -3, 0.5, 13);
    const V3 xq{0.37, -1.12, 2.2};
    for (double s : {0.25, 1.1, 2.9}) {
        const V3 a = quad.value(s, xq), b = hist.value(s, xq);
        for (int c = 0; c < 3; ++c) CHECK(b[c] == Catch::Approx(a[c]).margin(1e-12));
    }

    // zero extension far outside the sampled cube
    const V3 far = hist.value(1.0, {50.0, 0.0, 0.0});
    for (int c = 0; c < 3; ++c) CHECK(far[c] == 0.0);

    // halving dx cuts the interpolation error by ~8 on a static smooth field
    AnalyticField<3> fs([](double, const V3& y) {
        V3 r;
        for (int m = 0; m < 3; ++m) r[m] = 0.01 * std::cos(0.9 * y[m] + 0.2 * y[(m + 1) % 3]);
        return r;
    });
    auto worst_err = [&](double dx, int nx) {
        auto h = FH::sample(fs, 0, 1, 1, -4, dx, nx);
        double worst = 0;
        for (double x0 : {-1.37, 0.22, 1.91})
            for (double x1 : {-0.83, 0.57})
                for (double x2 : {-1.11, 1.33}) {
                    const V3 x{x0, x1, x2};
                    const V3 a = fs.value(0, x), b = h.value(0, x);
                    for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(a[c] - b[c]));
                }
        return worst;
    };
    CHECK(worst_err(0.4, 21) / worst_err(0.8, 11) < 0.25);
}

TEST_CASE("field history decay ledger and replay through the solver", "[chars]") {
    SaturatingField<3> f(1e-2);
    auto hist = FieldHistory<3>::sample(f, 0, 1, 3, -7, 0.35, 41);
    for (int k = 0; k <= 2; ++k) {
        double expect = 0;
        for (int it = 0; it < 3; ++it)
            expect = std::max(expect,
                              std::pow(bracket(double(it)), 3.0 + k) * f.sup_grad(double(it), k));
        const double rel = hist.decay_ledger(k) / expect;
        CHECK(rel > 0.9);   // grid sup slightly undershoots the continuum sup
        CHECK(rel < 1.01);
    }

    // solver driven by the sampled history tracks the analytic field
    auto hist2 = FieldHistory<3>::sample(f, 0, 0.25, 13, -5, 0.5, 21);
    auto pa = solve_point<3>(f, 3.0, {0.2, -0.3, 0.1}, {0.4, 0.2, -0.5});
    auto ph = solve_point<3>(hist2, 3.0, {0.2, -0.3, 0.1}, {0.4, 0.2, -0.5});
    double worst = 0, scale = 0;
    for (double s : {0.0, 1.0, 2.5}) {
        const V3 a = pa.Y(s), b = ph.Y(s);
        for (int c = 0; c < 3; ++c) {
            worst = std::max(worst, std::abs(a[c] - b[c]));
            scale = std::max(scale, std::abs(a[c]));
        }
    }
    CHECK(scale > 1e-3);  // the comparison is not vacuous
    CHECK(worst < 1e-4);
}
