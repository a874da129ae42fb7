#pragma once

#include <algorithm>
#include <complex>
#include <map>
#include <string>
#include <vector>

#include "svp/equilibrium.hpp"
#include "svp/fft.hpp"
#include "svp/quadrature.hpp"

namespace svp::dispersion {

using equilibria::Equilibrium;

/// Mode kernel K(t, xi) = (i xi / (1+|xi|^2)) . F[grad_v mu](t xi)
///                      = -(t |xi|^2 / (1+|xi|^2)) hat mu(t xi).
/// Real-valued for the built-in families (hat mu real and even).
template <std::size_t D>
double mode_kernel(const Equilibrium<D>& eq, double t, const Vec<D>& xi) {
    const double q = dot(xi, xi);
    if (q == 0) return 0;
    Vec<D> txi{};
    for (std::size_t i = 0; i < D; ++i) txi[i] = t * xi[i];
    return -(t * q / (1 + q)) * eq.fourier(txi);
}

/// Truncation horizon making the Gaussian tail of K negligible (< 1e-30 rel).
template <std::size_t D>
double default_t_cut(const Equilibrium<D>& eq, double r) {
    return 12.0 / (eq.sigma * r) + 12.0;
}

/// Closed-form bound on |int_{t_cut}^inf e^{-i tau t} K dt| for Im tau <= 0:
/// both families obey |K(t,r)| <= (r^2/(1+r^2)) t exp(-sigma^2 r^2 t^2 / 2).
template <std::size_t D>
double transform_tail_bound(const Equilibrium<D>& eq, double r, double t_cut) {
    const double s2 = eq.sigma * eq.sigma;
    return std::exp(-0.5 * s2 * r * r * t_cut * t_cut) / (s2 * (1 + r * r));
}

struct TransformResult {
    cplx value{0, 0};
    double tail_bound = 0;
};

/// hat K(tau, xi) = int_0^{t_cut} e^{-i tau t} K(t, xi) dt by composite
/// Simpson; requires Im tau <= 0 (the transform diverges otherwise).
template <std::size_t D>
TransformResult dispersion_transform(const Equilibrium<D>& eq, cplx tau, const Vec<D>& xi,
                                     double t_cut = -1, int n_t = -1) {
    if (tau.imag() > 1e-14)
        throw std::invalid_argument("dispersion_transform: Im tau must be <= 0");
    TransformResult out;
    const double r = norm2<D>(xi);
    if (r == 0) return out;
    if (t_cut <= 0) t_cut = default_t_cut(eq, r);
    if (n_t <= 0) {
        const double h = std::min({0.01, 1.0 / (8 * (1 + std::abs(tau))),
                                   1.0 / (10 * eq.sigma * std::max(r, 1.0))});
        n_t = static_cast<int>(std::ceil(t_cut / h));
    }
    if (n_t % 2) ++n_t;
    const double h = t_cut / n_t;
    const cplx itau(0, 1);
    cplx acc = 0;
    for (int j = 0; j <= n_t; ++j) {
        const double t = j * h;
        const cplx f = std::exp(-itau * tau * t) * mode_kernel(eq, t, xi);
        const double w = (j == 0 || j == n_t) ? 1.0 : (j % 2 ? 4.0 : 2.0);
        acc += w * f;
    }
    out.value = acc * (h / 3.0);
    out.tail_bound = transform_tail_bound(eq, r, t_cut);
    return out;
}

/// log-spaced radial grid covering [r_min, r_max] with `per_octave` points
/// per frequency doubling (endpoints included).
inline std::vector<double> log_spaced_octaves(double r_min, double r_max, int per_octave) {
    std::vector<double> r;
    const double octaves = std::log2(r_max / r_min);
    const int n = static_cast<int>(std::lround(octaves * per_octave));
    for (int i = 0; i <= n; ++i) r.push_back(r_min * std::pow(2.0, octaves * i / n));
    return r;
}

struct TauGrid {
    double tau_max = 40;
    double tau_step = 0.05;
};

struct PenroseReport {
    double margin = 0;            // min over sampled set of |1 - hat K|
    double argmin_r = 0;          // location of the margin
    double argmin_tau_re = 0;
    double argmin_tau_im = 0;
    std::map<double, int> winding;  // per |xi|: zero count of 1 - hat K in the half-disk
    bool stable = false;          // margin > 0 and all winding counts zero
    bool precision_ok = true;     // quadrature tails below margin/10
    std::string grid_spec;
};

namespace detail {

inline double sinc(double x) {
    if (std::abs(x) < 1e-6) return 1 - x * x / 6;
    return std::sin(x) / x;
}

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// accumulated (unwrapped) phase increment from w0 to w1, |increment| < pi
inline double phase_step(cplx w0, cplx w1) {
    return std::arg(w1 / w0);
}

// direct Filon-free quadrature of hat K at one complex tau (used on the
// semicircle where e^{Im tau t} truncates the integrand quickly)
template <std::size_t D>
cplx transform_at(const Equilibrium<D>& eq, cplx tau, double r, double t_cut) {
    const double b = -tau.imag();
    double t_eff = t_cut;
    if (b > 1e-9) t_eff = std::min(t_cut, 45.0 / b);
    const double osc = std::max(1.0, std::abs(tau.real()) * 0.75);
    const double panel = std::min(0.5, 2 * pi / (8 * osc));
    const int n_panels = static_cast<int>(std::ceil(t_eff / panel));
    Rule1D gl = gauss_legendre(4);
    cplx acc = 0;
    const cplx itau(0, 1);
    Vec<D> e1{};
    e1[0] = 1;
    for (int p = 0; p < n_panels; ++p) {
        const double a = t_eff * p / n_panels, c = t_eff * (p + 1) / n_panels;
        for (std::size_t q = 0; q < gl.size(); ++q) {
            const double t = 0.5 * (a + c) + 0.5 * (c - a) * gl.nodes[q];
            Vec<D> xi{};
            for (std::size_t i = 0; i < D; ++i) xi[i] = r * e1[i];
            acc += 0.5 * (c - a) * gl.weights[q] * std::exp(-itau * tau * t) *
                   mode_kernel(eq, t, xi);
        }
    }
    return acc;
}

}  // namespace detail

/// Penrose margin over the sampled half-plane set: for each r in r_grid the
/// transform is evaluated along the real tau line (FFT-accelerated Filon
/// trapezoid, tau step refined to resolve the sigma*r resonance scale) and at
/// the requested Im tau depths; winding counts of 1 - hat K around the lower
/// half-disk |tau| <= tau_max certify the absence of zeros. Modes are taken
/// along axis 0 (the bump axis for the double-bump family).
template <std::size_t D>
PenroseReport penrose_margin(const Equilibrium<D>& eq, const std::vector<double>& r_grid,
                             const TauGrid& tg = {},
                             const std::vector<double>& im_depths = {0.0, -0.1, -0.5}) {
    PenroseReport rep;
    rep.margin = 1.0;  // analytic xi = 0 limit: hat K -> 0
    rep.argmin_r = 0;
    double worst_tail_ratio = 0;

    for (double r : r_grid) {
        const double t_cut = default_t_cut(eq, r);
        const double dt = std::min(0.05, 1.0 / (20 * eq.sigma * r));
        const int n_t = static_cast<int>(std::ceil(t_cut / dt));
        const double dtau_target = std::min(tg.tau_step, eq.sigma * r / 6);
        std::size_t N = detail::next_pow2(std::max<std::size_t>(
            n_t + 1, static_cast<std::size_t>(std::ceil(2 * pi / (dtau_target * dt)))));
        const double tail = transform_tail_bound(eq, r, t_cut);

        Vec<D> xi{};
        xi[0] = r;
        std::vector<double> kernel_samples(n_t + 1);
        for (int j = 0; j <= n_t; ++j) kernel_samples[j] = mode_kernel(eq, j * dt, xi);

        std::vector<cplx> line;  // 1 - hat K on the real line, ascending tau
        std::vector<double> line_tau;
        for (double depth : im_depths) {
            std::vector<cplx> buf(N, cplx(0, 0));
            for (int j = 0; j <= n_t; ++j)
                buf[j] = kernel_samples[j] * std::exp(depth * (j * dt));
            fft_1d(buf, FFTW_FORWARD);
            std::vector<std::pair<double, cplx>> bins;
            for (std::size_t k = 0; k < N; ++k) {
                const double m = k < N / 2 ? static_cast<double>(k)
                                           : static_cast<double>(k) - static_cast<double>(N);
                const double tau = 2 * pi * m / (N * dt);
                if (std::abs(tau) > tg.tau_max) continue;
                const double w = detail::sinc(0.5 * tau * dt);
                const cplx hatK = dt * w * w * buf[k];
                const cplx one_minus = cplx(1, 0) - hatK;
                bins.emplace_back(tau, one_minus);
                const double dist = std::abs(one_minus);
                if (dist < rep.margin) {
                    rep.margin = dist;
                    rep.argmin_r = r;
                    rep.argmin_tau_re = tau;
                    rep.argmin_tau_im = depth;
                }
            }
            if (depth == 0.0) {
                std::sort(bins.begin(), bins.end(),
                          [](const auto& a, const auto& b) { return a.first < b.first; });
                line.reserve(bins.size());
                for (auto& [tau, w] : bins) {
                    line.push_back(w);
                    line_tau.push_back(tau);
                }
            }
        }
        worst_tail_ratio = std::max(worst_tail_ratio, tail);

        // winding along the real line ...
        double dphi = 0;
        for (std::size_t i = 0; i + 1 < line.size(); ++i)
            dphi += detail::phase_step(line[i], line[i + 1]);
        // ... closed through the lower semicircle tau = tau_max e^{-i theta}
        const double l1 = 1.0 / (eq.sigma * eq.sigma * (1 + r * r));  // int |K| dt
        cplx prev = line.back();
        const int n_theta = 128;
        for (int i = 1; i <= n_theta; ++i) {
            const double theta = pi * i / n_theta;
            const cplx tau = tg.tau_max * std::exp(cplx(0, -theta));
            cplx w;
            if (l1 < 0.35) {
                // |hat K| <= int |K| < 0.35 pins 1 - hat K near 1; endpoints suffice
                w = (i == n_theta) ? line.front() : cplx(1, 0);
            } else {
                w = cplx(1, 0) - detail::transform_at(eq, tau, r, t_cut);
                if (i == n_theta) w = line.front();
            }
            dphi += detail::phase_step(prev, w);
            prev = w;
        }
        const double turns = dphi / (2 * pi);
        const int count = static_cast<int>(std::lround(std::abs(turns)));
        if (std::abs(std::abs(turns) - count) > 0.2) rep.precision_ok = false;
        rep.winding[r] = count;
    }

    if (rep.margin > 0 && worst_tail_ratio > rep.margin / 10) rep.precision_ok = false;
    bool all_zero = true;
    for (auto& [r, c] : rep.winding)
        if (c != 0) all_zero = false;
    rep.stable = rep.margin > 0 && all_zero;
    rep.grid_spec = "r[" + format_double(r_grid.front()) + "," + format_double(r_grid.back()) +
                    "]x" + std::to_string(r_grid.size()) + ";tau<=" + format_double(tg.tau_max) +
                    ";step<=" + format_double(tg.tau_step) + "(refined to sigma*r/6);depths=" +
                    std::to_string(im_depths.size());
    return rep;
}

}  // namespace svp::dispersion
