#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "svp/dispersion.hpp"
#include "svp/equilibrium.hpp"
#include "svp/fft.hpp"

namespace svp::kernel {

using equilibria::Equilibrium;

/// Per-mode kernel samples K(t_j, r_m e1) on a uniform time grid. The
/// Volterra kernel depends on elapsed time only, so one time axis serves
/// every mode.
struct ModeKernelTable {
    double dt = 0;
    std::vector<double> t;               // t_j = j dt
    std::vector<double> r;               // mode radii, r = 0 allowed
    std::vector<std::vector<double>> K;  // K[m][j]
};

template <std::size_t D>
ModeKernelTable build_mode_kernel_table(const Equilibrium<D>& eq, double dt, double T,
                                        const std::vector<double>& r_grid) {
    if (dt <= 0 || T <= 0 || r_grid.empty())
        throw std::invalid_argument("build_mode_kernel_table: bad grid");
    ModeKernelTable tab;
    tab.dt = dt;
    const int n = static_cast<int>(std::lround(T / dt));
    tab.t.resize(n + 1);
    for (int j = 0; j <= n; ++j) tab.t[j] = j * dt;
    tab.r = r_grid;
    tab.K.resize(r_grid.size());
    for (std::size_t m = 0; m < r_grid.size(); ++m) {
        tab.K[m].resize(n + 1);
        Vec<D> xi{};
        xi[0] = r_grid[m];
        for (int j = 0; j <= n; ++j) tab.K[m][j] = dispersion::mode_kernel(eq, tab.t[j], xi);
    }
    return tab;
}

/// Mode resolvent G(t_j, r_m) solving G = K + K *_t G by trapezoid product
/// integration (second order). Modes whose solution exceeds 1e6 max|K| are
/// flagged unstable and left zero past the blowup point.
struct ResolventTable {
    double dt = 0;
    std::vector<double> t;
    std::vector<double> r;
    std::vector<std::vector<double>> G;
    std::vector<char> unstable;

    std::size_t time_index(double tv) const {
        const auto j = static_cast<std::size_t>(std::lround(tv / dt));
        if (j >= t.size()) throw std::out_of_range("ResolventTable: time beyond horizon");
        return j;
    }
};

inline ResolventTable solve_mode_resolvent(const ModeKernelTable& tab) {
    ResolventTable res;
    res.dt = tab.dt;
    res.t = tab.t;
    res.r = tab.r;
    res.G.assign(tab.r.size(), std::vector<double>(tab.t.size(), 0.0));
    res.unstable.assign(tab.r.size(), 0);
    const std::size_t n = tab.t.size();
    for (std::size_t m = 0; m < tab.r.size(); ++m) {
        const auto& K = tab.K[m];
        auto& G = res.G[m];
        double kmax = 0;
        for (double k : K) kmax = std::max(kmax, std::abs(k));
        if (kmax == 0) continue;  // zero kernel, zero resolvent
        const double lhs = 1 - 0.5 * tab.dt * K[0];
        if (std::abs(lhs) < 0.2)
            throw std::runtime_error("solve_mode_resolvent: dt too coarse for implicit weight");
        G[0] = K[0] / lhs;
        for (std::size_t j = 1; j < n; ++j) {
            double conv = 0.5 * K[j] * G[0];
            for (std::size_t i = 1; i < j; ++i) conv += K[j - i] * G[i];
            G[j] = (K[j] + tab.dt * conv) / lhs;
            if (std::abs(G[j]) > 1e6 * kmax) {
                res.unstable[m] = 1;
                std::fill(G.begin() + j, G.end(), 0.0);
                break;
            }
        }
    }
    return res;
}

/// Trapezoid Laplace transform of one resolvent mode at tau (Im tau <= 0).
inline cplx laplace_of_mode(const ResolventTable& res, std::size_t m, cplx tau) {
    const auto& G = res.G[m];
    const cplx itau(0, 1);
    cplx acc = 0.5 * G.front();
    for (std::size_t j = 1; j + 1 < G.size(); ++j)
        acc += G[j] * std::exp(-itau * tau * res.t[j]);
    acc += 0.5 * G.back() * std::exp(-itau * tau * res.t.back());
    return acc * res.dt;
}

struct LaplaceCheck {
    double max_rel_err = 0;
    double worst_r = 0;
    double worst_tau = 0;
};

/// Compare the transformed resolvent against hat K / (1 - hat K), the latter
/// evaluated independently by high-order quadrature of the kernel integral.
/// Throws if any sampled margin sits within 10x of the truncation tail.
template <std::size_t D>
LaplaceCheck laplace_consistency(const Equilibrium<D>& eq, const ResolventTable& res,
                                 const std::vector<double>& tau_samples) {
    LaplaceCheck out;
    for (std::size_t m = 0; m < res.r.size(); ++m) {
        if (res.r[m] == 0 || res.unstable[m]) continue;
        Vec<D> xi{};
        xi[0] = res.r[m];
        for (double tau : tau_samples) {
            auto tr = dispersion::dispersion_transform(eq, cplx(tau, 0), xi);
            const double margin = std::abs(cplx(1, 0) - tr.value);
            if (margin < 10 * tr.tail_bound)
                throw std::runtime_error("laplace_consistency: margin below quadrature tail");
            const cplx ref = tr.value / (cplx(1, 0) - tr.value);
            const cplx got = laplace_of_mode(res, m, cplx(tau, 0));
            const double rel = std::abs(got - ref) / std::max(std::abs(ref), 1e-12);
            if (rel > out.max_rel_err) {
                out.max_rel_err = rel;
                out.worst_r = res.r[m];
                out.worst_tau = tau;
            }
        }
    }
    return out;
}

/// Radial profile sampled on a log2-uniform grid; cubic (Catmull-Rom) in
/// log2 r inside, quadratic r^2 scaling below the first node (the mode data
/// vanish like r^2 there), zero above the last node.
struct RadialProfile {
    std::vector<double> r;
    std::vector<double> v;

    double operator()(double rq) const {
        if (rq <= 0) return 0;
        const double u0 = std::log2(r.front());
        const double du = std::log2(r[1]) - u0;
        const double u = (std::log2(rq) - u0) / du;
        if (u <= 0) {
            const double s = rq / r.front();
            return v.front() * s * s;
        }
        const auto nseg = static_cast<double>(r.size() - 1);
        if (u >= nseg) return 0;
        const auto i = static_cast<std::size_t>(u);
        const double s = u - static_cast<double>(i);
        const double p1 = v[i], p2 = v[i + 1];
        const double m1 = i > 0 ? 0.5 * (v[i + 1] - v[i - 1]) : v[i + 1] - v[i];
        const double m2 = i + 2 < v.size() ? 0.5 * (v[i + 2] - v[i]) : v[i + 1] - v[i];
        const double s2 = s * s, s3 = s2 * s;
        return (2 * s3 - 3 * s2 + 1) * p1 + (s3 - 2 * s2 + s) * m1 +
               (-2 * s3 + 3 * s2) * p2 + (s3 - s2) * m2;
    }
};

/// Profile of G(t_j, .) over the nonzero radii of the table.
inline RadialProfile resolvent_profile(const ResolventTable& res, std::size_t j) {
    RadialProfile p;
    for (std::size_t m = 0; m < res.r.size(); ++m) {
        if (res.r[m] == 0) continue;
        p.r.push_back(res.r[m]);
        p.v.push_back(res.G[m][j]);
    }
    if (p.r.size() < 4) throw std::invalid_argument("resolvent_profile: need >= 4 radii");
    return p;
}

/// Dyadic partition of unity: chi_q(r) = b(r/2^q) / sum_p b(r/2^p) with b a
/// C^inf bump equal to 1 on [1/2, 2] and supported in [1/4, 4]; the translates
/// sum to 1 exactly for every r > 0.
struct DyadicPartition {
    static double bump(double r) {
        if (r <= 0.25 || r >= 4) return 0;
        if (r < 0.5) return smooth_ramp((r - 0.25) / 0.25);
        if (r <= 2) return 1;
        return smooth_ramp((4 - r) / 2);
    }
    static double chi(int q, double r) {
        if (r <= 0) return 0;
        const double bq = bump(r * std::pow(2.0, -q));
        if (bq == 0) return 0;
        const int pl = static_cast<int>(std::floor(std::log2(r))) - 2;
        double s = 0;
        for (int p = pl; p <= pl + 5; ++p) s += bump(r * std::pow(2.0, -p));
        return bq / s;
    }
};

inline cplx i_pow(int k) {
    switch (k & 3) {
        case 0: return {1, 0};
        case 1: return {0, 1};
        case 2: return {-1, 0};
        default: return {0, -1};
    }
}

/// Box sizing for physical-space assembly. The comoving policy tracks the
/// ballistic spreading of the kernel so late slices stay resolved.
struct BoxPolicy {
    bool comoving = false;
    double fixed_side = 40;
    double scale = 25;
    double floor_t = 1.6;
    double side(double t) const { return comoving ? scale * std::max(t, floor_t) : fixed_side; }
};

struct GreenSlice {
    double t = 0;
    double side = 0;
    bool aliasing_warn = false;
    std::vector<double> L1;    // index k: max over derivative patterns |alpha| = k
    std::vector<double> Linf;
};

struct GreenReport {
    int k_max = 0;
    std::vector<GreenSlice> slices;
};

namespace detail {

// distinct sorted derivative patterns of order k in 3 variables; for radial
// data every permutation of a pattern has identical norms
inline std::vector<std::array<int, 3>> sorted_patterns(int k) {
    std::vector<std::array<int, 3>> out;
    for (auto a : multi_indices<3>(k)) {
        std::sort(a.begin(), a.end(), std::greater<>());
        if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
    }
    return out;
}

struct BoxNorms {
    double L1 = 0, Linf = 0, L2sq_phys = 0, L2sq_spec = 0;
    bool aliasing_warn = false;
};

// fill hat g on the box from a radial spectral profile times a derivative
// multiplier, inverse transform, measure norms and the boundary-shell monitor
inline BoxNorms box_norms(const SpectralBox<3>& box, const RadialProfile& prof,
                          const std::array<int, 3>& alpha) {
    const auto ti = box.indexer();
    const int order = alpha[0] + alpha[1] + alpha[2];
    const cplx ik = i_pow(order);
    std::vector<cplx> data(box.size());
    double peak = 0, boundary = 0;
    for (std::size_t f = 0; f < data.size(); ++f) {
        const auto k = ti.decode(f);
        const auto xi = box.xi(k);
        double mult = 1;
        for (std::size_t i = 0; i < 3; ++i)
            for (int p = 0; p < alpha[i]; ++p) mult *= xi[i];
        const cplx val = ik * mult * prof(norm2<3>(xi));
        data[f] = val;
        const double a = std::abs(val);
        int maxm = 0;
        for (std::size_t i = 0; i < 3; ++i) maxm = std::max(maxm, std::abs(box.mode_of(k[i])));
        if (maxm >= box.n / 2 - 1) boundary = std::max(boundary, a);
        peak = std::max(peak, a);
    }
    BoxNorms out;
    for (const auto& c : data) out.L2sq_spec += std::norm(c);
    out.L2sq_spec /= std::pow(box.L, 3);
    out.aliasing_warn = peak > 0 && boundary > 1e-6 * peak;
    box.backward(data);
    const double cell = std::pow(box.h(), 3);
    for (const auto& c : data) {
        const double a = std::abs(c);
        out.L1 += a * cell;
        out.Linf = std::max(out.Linf, a);
        out.L2sq_phys += a * a * cell;
    }
    return out;
}

}  // namespace detail

/// Physical-space kernel norms ||grad^k G(t)||_{L1 / Linf} for k <= k_max,
/// assembled per time slice by radial interpolation of the mode resolvent
/// onto a Cartesian spectral box and inverse FFT. Derivatives enter as
/// (i xi)^alpha multipliers; the reported k-norm is the max over distinct
/// patterns of order k. Samples snap to the resolvent time grid.
inline GreenReport assemble_physical_green(const ResolventTable& res,
                                           const std::vector<double>& t_samples, int k_max,
                                           const BoxPolicy& policy = {}, int n_box = 64) {
    GreenReport rep;
    rep.k_max = k_max;
    for (double tv : t_samples) {
        const std::size_t j = res.time_index(tv);
        GreenSlice slice;
        slice.t = res.t[j];
        slice.side = policy.side(slice.t);
        slice.L1.assign(k_max + 1, 0.0);
        slice.Linf.assign(k_max + 1, 0.0);
        if (j == 0) {  // G(0,.) = 0 for the built-in families
            rep.slices.push_back(slice);
            continue;
        }
        SpectralBox<3> box{slice.side, n_box};
        const auto prof = resolvent_profile(res, j);
        for (int k = 0; k <= k_max; ++k)
            for (const auto& alpha : detail::sorted_patterns(k)) {
                auto norms = detail::box_norms(box, prof, alpha);
                slice.L1[k] = std::max(slice.L1[k], norms.L1);
                slice.Linf[k] = std::max(slice.Linf[k], norms.Linf);
                slice.aliasing_warn = slice.aliasing_warn || norms.aliasing_warn;
            }
        rep.slices.push_back(slice);
    }
    return rep;
}

struct LPBlockBound {
    int q = 0;
    double A = 2;
    double delta = 1;
    double K_pow = 6;
    std::vector<double> t;
    std::vector<double> L1, Linf;          // measured block norms
    std::vector<double> env_L1, env_Linf;  // lemma envelope shapes
    double C_L1 = 0, C_Linf = 0;           // worst measured/envelope ratios
};

/// Frequency-localized kernel block G_q = (chi_q hat G)^check, measured on the
/// exact radial inverse transform (G is radial for the built-in equilibria):
/// G_q(R) = (2 pi^2 R)^{-1} int sin(rR) chi_q(r) G~(t,r) r dr over the dyadic
/// annulus. A Cartesian box cannot resolve the chi ramp (width 2^q/4) while
/// keeping the annulus under its Nyquist, which inflates L1 through spurious
/// slow tails; the 1-D quadrature has no such limit. Norms are compared
/// against the dyadic envelope shapes: for 2^q >= A the high-frequency form
/// 2^{q(1+delta)}/(1+2^{2q}) (1+2^q t)^{-K} (L1; Linf carries 2^{q d} more),
/// else the low form 2^q (1+2^q t)^{-K}. Throws if the annulus is not inside
/// the resolved mode range.
inline LPBlockBound littlewood_paley_block(const ResolventTable& res, int q,
                                           const std::vector<double>& t_samples, double A = 2,
                                           double delta = 1, double K_pow = 6) {
    LPBlockBound out;
    out.q = q;
    out.A = A;
    out.delta = delta;
    out.K_pow = K_pow;
    const double two_q = std::pow(2.0, q);
    const double r_lo = two_q / 4, r_hi = 4 * two_q;
    double r_top = 0, r_bot = std::numeric_limits<double>::max();
    for (double rv : res.r) {
        r_top = std::max(r_top, rv);
        if (rv > 0) r_bot = std::min(r_bot, rv);
    }
    if (r_hi > r_top || r_lo < r_bot)
        throw std::out_of_range("littlewood_paley_block: annulus outside resolved modes");

    const bool high = two_q >= A;
    const double d = 3;
    for (double tv : t_samples) {
        const std::size_t j = res.time_index(tv);
        const double t = res.t[j];
        const auto prof = resolvent_profile(res, j);

        // physical extent: ballistic spread plus the chi-localization tail
        // scale 2^{-q}; envelope tails beyond 32 wavelengths are < 1e-9
        const double R_max = 8 * t + 32 / two_q;
        const double dR = 2 * pi / r_hi / 12;
        const std::size_t n_R = static_cast<std::size_t>(std::ceil(R_max / dR)) + 1;
        // annulus rule: keep the accumulated phase step r*dr below 0.3 rad at
        // the farthest R so the trapezoid resolves every oscillation
        std::size_t n_xi = 2048;
        n_xi = std::max(n_xi, static_cast<std::size_t>(
                                  std::ceil((r_hi - r_lo) * R_max / 0.3)));
        const double dr = (r_hi - r_lo) / static_cast<double>(n_xi - 1);

        std::vector<double> acc(n_R, 0.0);  // int sin(rR) phi(r) r dr per R node
        double mass_r2 = 0;                 // int phi(r) r^2 dr (R -> 0 limit)
        for (std::size_t i = 0; i < n_xi; ++i) {
            const double rv = r_lo + dr * static_cast<double>(i);
            const double w = (i == 0 || i + 1 == n_xi) ? dr / 2 : dr;
            const double phi = DyadicPartition::chi(q, rv) * prof(rv);
            if (phi == 0) continue;
            mass_r2 += w * phi * rv * rv;
            const double f = w * phi * rv;
            // sin(rv * R_j) by stable rotation: R_j = j * dR
            const double cs = std::cos(rv * dR), sn = std::sin(rv * dR);
            double s = 0, c = 1;
            for (std::size_t jj = 0; jj < n_R; ++jj) {
                acc[jj] += f * s;
                const double s2 = s * cs + c * sn;
                c = c * cs - s * sn;
                s = s2;
            }
        }
        double Linf = std::abs(mass_r2) / (2 * pi * pi);
        double L1 = 0;
        for (std::size_t jj = 1; jj < n_R; ++jj) {
            const double R = dR * static_cast<double>(jj);
            const double g = std::abs(acc[jj]) / (2 * pi * pi * R);
            Linf = std::max(Linf, g);
            const double w = (jj + 1 == n_R) ? dR / 2 : dR;
            L1 += 4 * pi * R * R * g * w;
        }

        const double decay = std::pow(1 + two_q * t, -K_pow);
        const double e1 = high ? std::pow(two_q, 1 + delta) / (1 + two_q * two_q) * decay
                               : two_q * decay;
        const double ei = high
                              ? std::pow(two_q, d + 1 + delta) / (1 + two_q * two_q) * decay
                              : std::pow(two_q, d + 1) * decay;
        out.t.push_back(t);
        out.L1.push_back(L1);
        out.Linf.push_back(Linf);
        out.env_L1.push_back(e1);
        out.env_Linf.push_back(ei);
        out.C_L1 = std::max(out.C_L1, L1 / e1);
        out.C_Linf = std::max(out.C_Linf, Linf / ei);
    }
    return out;
}

/// Default mode radii for tables: 0 plus the dispersion default log grid.
/// The bottom octaves feed late-time physical assembly (content at r ~ 1/t).
inline std::vector<double> default_mode_radii(double r_min = 1.0 / 512, double r_max = 64,
                                              int per_octave = 8) {
    std::vector<double> r{0.0};
    auto lg = dispersion::log_spaced_octaves(r_min, r_max, per_octave);
    r.insert(r.end(), lg.begin(), lg.end());
    return r;
}

}  // namespace svp::kernel
