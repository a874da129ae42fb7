#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "svp/characteristics.hpp"
#include "svp/equilibrium.hpp"
#include "svp/fft.hpp"
#include "svp/kernel.hpp"
#include "svp/quadrature.hpp"
#include "svp/transport.hpp"

// Forcing assembly and linear response on a periodic box.
//
// The density perturbation obeys rho = S + G *_t S with S = I + R_L - R_NL:
// I transports the initial datum along the perturbed flow, R_L is the linear
// field-equilibrium reaction, and R_NL is the same reaction along the flow.
// R_L - R_NL is evaluated as one difference with shared quadrature nodes so
// the leading-order terms cancel pointwise, leaving the quadratic remainder.
//
// Two routes compute the reaction terms. The exact route composes fields
// with per-point Picard trajectories and is affordable on spot grids only.
// The production route works in straightened coordinates w = x - tv: for a
// fixed velocity node the shifted field SH(tau, w) = E(tau, w + tau v) is a
// band-limited function assembled by twisted inverse FFTs, the flow
// deviations come from cumulative tail integrals of SH (first Picard
// iterate), and the composed field is a second-order Taylor expansion. The
// deviation error is O(eps) relative, so every eps^2-level output keeps its
// scaling; frozen or zero flow reproduces the cancellation exactly.

namespace svp::response {

using equilibria::Equilibrium;
using transport::InitialDatum;

namespace detail {

/// FFTW transforms with cached plans and SpectralBox conventions. The
/// conventional forward/backward match SpectralBox bit for bit; hot loops
/// use the raw buffer and fold parity/scale factors into their own twists.
template <std::size_t D>
struct BoxTransform {
    SpectralBox<D> box;
    std::vector<cplx> buf;
    std::vector<double> parity;  // (-1)^{sum of modes}, the grid-centering phase

    BoxTransform() = default;
    explicit BoxTransform(const SpectralBox<D>& b) : box(b), buf(b.size()) {
        int dims[D];
        for (std::size_t i = 0; i < D; ++i) dims[i] = b.n;
        auto* p = reinterpret_cast<fftw_complex*>(buf.data());
        fwd_ = fftw_plan_dft(static_cast<int>(D), dims, p, p, FFTW_FORWARD, FFTW_ESTIMATE);
        bwd_ = fftw_plan_dft(static_cast<int>(D), dims, p, p, FFTW_BACKWARD, FFTW_ESTIMATE);
        if (!fwd_ || !bwd_) throw std::runtime_error("BoxTransform: planning failed");
        parity.resize(b.size());
        const auto ti = b.indexer();
        for (std::size_t f = 0; f < parity.size(); ++f) {
            const auto k = ti.decode(f);
            int ms = 0;
            for (std::size_t i = 0; i < D; ++i) ms += b.mode_of(k[i]);
            parity[f] = (ms & 1) ? -1.0 : 1.0;
        }
    }
    BoxTransform(const BoxTransform&) = delete;
    BoxTransform& operator=(const BoxTransform&) = delete;
    ~BoxTransform() {
        if (fwd_) fftw_destroy_plan(fwd_);
        if (bwd_) fftw_destroy_plan(bwd_);
    }

    void exec_fwd() { fftw_execute(fwd_); }
    void exec_bwd() { fftw_execute(bwd_); }

    void forward(std::vector<cplx>& d) {
        double s = 1;
        for (std::size_t i = 0; i < D; ++i) s *= box.h();
        for (std::size_t i = 0; i < d.size(); ++i) buf[i] = d[i];
        exec_fwd();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = buf[i] * (s * parity[i]);
    }
    void backward(std::vector<cplx>& d) {
        double s = 1;
        for (std::size_t i = 0; i < D; ++i) s /= box.L;
        for (std::size_t i = 0; i < d.size(); ++i) buf[i] = d[i] * parity[i];
        exec_bwd();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = buf[i] * s;
    }

  private:
    fftw_plan fwd_ = nullptr, bwd_ = nullptr;
};

/// Clamped Catmull-Rom interpolation on a uniform grid (end samples repeat).
template <typename T>
T interp_uniform(const std::vector<double>& t, const std::vector<T>& y, double dt, double s) {
    const auto n = static_cast<long>(y.size());
    if (n == 1) return y[0];
    const double u = (s - t.front()) / dt;
    auto i = static_cast<long>(std::floor(u));
    i = std::max(0L, std::min(n - 2, i));
    const double f = u - static_cast<double>(i);
    auto at = [&](long j) { return y[static_cast<std::size_t>(std::max(0L, std::min(n - 1, j)))]; };
    const double w0 = 0.5 * (-f * f * f + 2 * f * f - f);
    const double w1 = 0.5 * (3 * f * f * f - 5 * f * f + 2);
    const double w2 = 0.5 * (-3 * f * f * f + 4 * f * f + f);
    const double w3 = 0.5 * (f * f * f - f * f);
    return at(i - 1) * w0 + at(i) * w1 + at(i + 1) * w2 + at(i + 2) * w3;
}

/// Cubic Hermite on a nonuniform grid with three-point slopes; exact on
/// linear data, clamped outside the abscissa range.
template <typename T>
T interp_graded(const std::vector<double>& t, const std::vector<T>& y, double s) {
    const std::size_t n = y.size();
    if (n == 1) return y[0];
    if (s <= t.front()) return y.front();
    if (s >= t.back()) return y.back();
    std::size_t i = 0;
    while (i + 2 < n && t[i + 1] <= s) ++i;
    auto slope = [&](std::size_t j) -> T {
        if (j == 0) return (y[1] - y[0]) / (t[1] - t[0]);
        if (j + 1 == n) return (y[n - 1] - y[n - 2]) / (t[n - 1] - t[n - 2]);
        const double hl = t[j] - t[j - 1], hr = t[j + 1] - t[j];
        return ((y[j + 1] - y[j]) / hr * hl + (y[j] - y[j - 1]) / hl * hr) / (hl + hr);
    };
    const double h = t[i + 1] - t[i];
    const double f = (s - t[i]) / h;
    const T m0 = slope(i) * h, m1 = slope(i + 1) * h;
    const double f2 = f * f, f3 = f2 * f;
    return y[i] * (2 * f3 - 3 * f2 + 1) + m0 * (f3 - 2 * f2 + f) + y[i + 1] * (-2 * f3 + 3 * f2) +
           m1 * (f3 - f2);
}

/// Composite trapezoid weights for an ascending node sequence.
inline std::vector<double> ladder_weights(const std::vector<double>& s) {
    std::vector<double> w(s.size(), 0.0);
    if (s.size() < 2) return w;
    for (std::size_t j = 0; j < s.size(); ++j) {
        const double lo = j == 0 ? s[0] : s[j - 1];
        const double hi = j + 1 == s.size() ? s.back() : s[j + 1];
        w[j] = 0.5 * (hi - lo);
    }
    return w;
}

inline int fine_index(double tv, double dt, const char* what) {
    const double u = tv / dt;
    const auto k = static_cast<int>(std::lround(u));
    if (std::abs(u - k) > 1e-9)
        throw std::invalid_argument(std::string(what) + ": time " + format_double(tv) +
                                    " is not a multiple of dt");
    return k;
}

}  // namespace detail

/// Density samples on a periodic box over a uniform time grid, physical
/// values and spectra kept in lockstep. set_* maintains the pairing; the
/// validate() invariant is a sub-1e-10 round trip and a real-valued field.
template <std::size_t D>
struct DensityHistory {
    SpectralBox<D> box;
    double dt = 0;
    std::vector<double> t;
    std::vector<std::vector<double>> values;
    std::vector<std::vector<cplx>> spectra;

    static DensityHistory zeros(const SpectralBox<D>& b, double dt, double T) {
        if (dt <= 0 || T < 0) throw std::invalid_argument("DensityHistory: bad time grid");
        DensityHistory h;
        h.box = b;
        h.dt = dt;
        const int n = detail::fine_index(T, dt, "DensityHistory");
        for (int j = 0; j <= n; ++j) h.t.push_back(j * dt);
        h.values.assign(h.t.size(), std::vector<double>(b.size(), 0.0));
        h.spectra.assign(h.t.size(), std::vector<cplx>(b.size(), cplx(0, 0)));
        return h;
    }

    std::size_t time_index(double tv) const {
        const auto k = detail::fine_index(tv, dt, "DensityHistory");
        if (k < 0 || static_cast<std::size_t>(k) >= t.size())
            throw std::out_of_range("DensityHistory: time beyond horizon");
        return static_cast<std::size_t>(k);
    }

    void set_values(std::size_t j, std::vector<double> vals) {
        std::vector<cplx> hat(vals.begin(), vals.end());
        box.forward(hat);
        values[j] = std::move(vals);
        spectra[j] = std::move(hat);
    }
    void set_spectrum(std::size_t j, std::vector<cplx> hat) {
        std::vector<cplx> phys = hat;
        box.backward(phys);
        auto& v = values[j];
        v.resize(phys.size());
        for (std::size_t p = 0; p < phys.size(); ++p) v[p] = phys[p].real();
        spectra[j] = std::move(hat);
    }

    /// Worst relative cache drift plus imaginary leakage over all slices.
    double roundtrip_error() const {
        double worst = 0, scale = 0;
        for (const auto& hat : spectra)
            for (const auto& c : hat) scale = std::max(scale, std::abs(c));
        if (scale == 0) return 0;
        SpectralBox<D> b = box;
        for (std::size_t j = 0; j < t.size(); ++j) {
            std::vector<cplx> phys(spectra[j]);
            b.backward(phys);
            double imag = 0;
            for (const auto& c : phys) imag = std::max(imag, std::abs(c.imag()));
            std::vector<cplx> hat(values[j].begin(), values[j].end());
            b.forward(hat);
            double drift = 0;
            for (std::size_t p = 0; p < hat.size(); ++p)
                drift = std::max(drift, std::abs(hat[p] - spectra[j][p]));
            worst = std::max(worst, std::max(drift, imag) / scale);
        }
        return worst;
    }
    void validate(double tol = 1e-10) const {
        const double e = roundtrip_error();
        if (e > tol)
            throw std::logic_error("DensityHistory: cache inconsistent, round-trip " +
                                   format_double(e));
    }
};

/// Periodic vector field history on the box. Spectra drive the response
/// machinery; the ForceField interface interpolates the stored physical
/// samples (Catmull-Rom per axis, periodic wrap, clamped in time) for the
/// per-point trajectory solver.
template <std::size_t D>
class PeriodicField final : public chars::ForceField<D> {
  public:
    SpectralBox<D> box;
    double dt = 0;
    std::vector<double> t;
    std::vector<std::array<std::vector<cplx>, D>> spectra;
    std::vector<std::array<std::vector<double>, D>> values;

    static PeriodicField zeros(const SpectralBox<D>& b, double dt, double T) {
        PeriodicField f;
        f.box = b;
        f.dt = dt;
        const int n = detail::fine_index(T, dt, "PeriodicField");
        for (int j = 0; j <= n; ++j) f.t.push_back(j * dt);
        f.spectra.resize(f.t.size());
        f.values.resize(f.t.size());
        for (std::size_t j = 0; j < f.t.size(); ++j)
            for (std::size_t c = 0; c < D; ++c) {
                f.spectra[j][c].assign(b.size(), cplx(0, 0));
                f.values[j][c].assign(b.size(), 0.0);
            }
        return f;
    }

    double sup_norm(std::size_t j) const {
        double s = 0;
        for (std::size_t c = 0; c < D; ++c)
            for (double v : values[j][c]) s = std::max(s, std::abs(v));
        return s;
    }

    Vec<D> value(double s, const Vec<D>& x) const override {
        // time stencil
        const auto nt = static_cast<long>(t.size());
        const double u = s / dt;
        long j = std::max(0L, std::min(nt - 2, static_cast<long>(std::floor(u))));
        if (nt == 1) j = 0;
        const double ft = nt == 1 ? 0 : u - static_cast<double>(j);
        double wt[4];
        cr_weights(ft, wt);
        // space stencil per axis
        const int n = box.n;
        const double h = box.h();
        int base[D];
        double wx[D][4];
        for (std::size_t a = 0; a < D; ++a) {
            double ua = (x[a] + box.L / 2) / h;
            ua -= std::floor(ua / n) * n;  // wrap into [0, n)
            const auto ia = static_cast<int>(std::floor(ua));
            cr_weights(ua - ia, wx[a]);
            base[a] = ia;
        }
        Vec<D> out{};
        std::size_t count = 1;
        for (std::size_t a = 0; a < D; ++a) count *= 4;
        for (int dtap = 0; dtap < 4; ++dtap) {
            const long jj = std::max(0L, std::min(nt - 1, j - 1 + dtap));
            if (wt[dtap] == 0 && nt > 1) continue;
            const auto& slab = values[static_cast<std::size_t>(jj)];
            for (std::size_t m = 0; m < count; ++m) {
                std::size_t rem = m, flat = 0;
                double w = nt == 1 ? (dtap == 1 ? 1.0 : 0.0) : wt[dtap];
                if (w == 0) continue;
                for (std::size_t a = 0; a < D; ++a) {
                    const auto tap = static_cast<int>(rem % 4);
                    rem /= 4;
                    int idx = (base[a] - 1 + tap) % n;
                    if (idx < 0) idx += n;
                    flat = flat * static_cast<std::size_t>(n) + static_cast<std::size_t>(idx);
                    w *= wx[a][tap];
                }
                if (w == 0) continue;
                for (std::size_t c = 0; c < D; ++c) out[c] += w * slab[c][flat];
            }
        }
        return out;
    }

  private:
    static void cr_weights(double f, double* w) {
        const double f2 = f * f, f3 = f2 * f;
        w[0] = 0.5 * (-f3 + 2 * f2 - f);
        w[1] = 0.5 * (3 * f3 - 5 * f2 + 2);
        w[2] = 0.5 * (-3 * f3 + 4 * f2 + f);
        w[3] = 0.5 * (f3 - f2);
    }
};

/// E = -grad (1 - Laplace)^{-1} rho: per mode hat E = -i xi hat rho / (1+|xi|^2).
template <std::size_t D>
PeriodicField<D> field_from_density(const DensityHistory<D>& rho) {
    PeriodicField<D> f = PeriodicField<D>::zeros(rho.box, rho.dt, rho.t.back());
    const auto ti = rho.box.indexer();
    detail::BoxTransform<D> bt(rho.box);
    for (std::size_t j = 0; j < rho.t.size(); ++j) {
        for (std::size_t c = 0; c < D; ++c) {
            auto& hat = f.spectra[j][c];
            for (std::size_t p = 0; p < hat.size(); ++p) {
                const auto xi = rho.box.xi(ti.decode(p));
                hat[p] = cplx(0, -xi[c]) / (1 + dot(xi, xi)) * rho.spectra[j][p];
            }
            std::vector<cplx> phys(hat);
            bt.backward(phys);
            for (std::size_t p = 0; p < phys.size(); ++p) f.values[j][c][p] = phys[p].real();
        }
    }
    return f;
}

/// Spectrum of the periodized free density: separable data transport to
/// hat rho_free(t, xi) = eps prod_a hat ax_a(xi_a) hat av_a(t xi_a). The axis
/// transforms are 1600-node trapezoids over the profile support, machine
/// accurate for the smooth built-in profiles.
template <std::size_t D>
class FreeDensitySpectra {
  public:
    FreeDensitySpectra(const InitialDatum<D>& f0, const SpectralBox<D>& box)
        : f0_(&f0), box_(box) {}

    static cplx axis_transform(const transport::AxisProfile& a, double eta) {
        const double half = a.support_halfwidth();
        const int n = 1600;
        const double h = 2 * half / (n - 1);
        cplx acc = 0;
        for (int i = 0; i < n; ++i) {
            const double z = -half + h * i;
            const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
            acc += w * a.value(z) * std::exp(cplx(0, -eta * z));
        }
        return acc * h;
    }

    std::vector<cplx> spectrum(double tv) const {
        const int n = box_.n;
        std::array<std::vector<cplx>, D> tx, tvv;
        for (std::size_t a = 0; a < D; ++a) {
            tx[a].resize(n);
            tvv[a].resize(n);
            for (int k = 0; k < n; ++k) {
                const double eta = 2 * pi * box_.mode_of(k) / box_.L;
                tx[a][k] = axis_transform(*f0_->ax[a], eta);
                tvv[a][k] = axis_transform(*f0_->av[a], tv * eta);
            }
        }
        const auto ti = box_.indexer();
        std::vector<cplx> hat(box_.size());
        for (std::size_t p = 0; p < hat.size(); ++p) {
            const auto k = ti.decode(p);
            cplx v = f0_->eps;
            for (std::size_t a = 0; a < D; ++a) v *= tx[a][k[a]] * tvv[a][k[a]];
            hat[p] = v;
        }
        return hat;
    }

  private:
    const InitialDatum<D>* f0_;
    SpectralBox<D> box_;
};

// ---------------------------------------------------------------------------
// exact routes: per-point trajectories, spot grids
// ---------------------------------------------------------------------------

/// I(t, x) = sum_v w_v f0(X_{0,t}(x, v), V_{0,t}(x, v)) with trajectories from
/// the per-point solver. E == 0 collapses to the free-transport quadrature.
template <std::size_t D>
std::vector<double> initial_term(const InitialDatum<D>& f0,
                                 const chars::CharacteristicsSolution<D>& sol, double tv,
                                 const std::vector<Vec<D>>& x_grid, const Rule1D& vrule) {
    if (vrule.size() == 0) throw std::invalid_argument("initial_term: empty velocity rule");
    std::vector<double> out(x_grid.size(), 0.0);
    TensorIndex<D> vt;
    vt.n.fill(static_cast<int>(vrule.size()));
    for (std::size_t xi = 0; xi < x_grid.size(); ++xi) {
        const auto& x = x_grid[xi];
        typename chars::CharacteristicsSolution<D>::Cache cache;  // per point, bounded memory
        double acc = 0;
        for (std::size_t f = 0; f < vt.size(); ++f) {
            const auto idx = vt.decode(f);
            Vec<D> v{};
            double wv = 1;
            for (std::size_t a = 0; a < D; ++a) {
                v[a] = vrule.nodes[idx[a]];
                wv *= vrule.weights[idx[a]];
            }
            Vec<D> w = axpy(-tv, v, x);
            const auto& path = sol.path_in(cache, w, v);
            const Vec<D> Y = path.Y(0), W = path.W(0);
            Vec<D> X = w, V = v;
            for (std::size_t c = 0; c < D; ++c) {
                X[c] += Y[c];
                V[c] += W[c];
            }
            acc += wv * f0.value(X, V);
        }
        out[xi] = acc;
    }
    return out;
}

/// T(E, mu)(t, x): the linear reaction minus its flowed counterpart, one
/// difference per shared (s, v) node. cuts is the ascending s-ladder from 0;
/// the t endpoint (zero integrand) is appended internally.
template <std::size_t D>
std::vector<double> bilinear_reaction(const chars::ForceField<D>& E, const Equilibrium<D>& mu,
                                      const chars::CharacteristicsSolution<D>& sol, double tv,
                                      const std::vector<Vec<D>>& x_grid, const Rule1D& vrule,
                                      std::vector<double> cuts) {
    if (vrule.size() == 0) throw std::invalid_argument("bilinear_reaction: empty velocity rule");
    std::vector<double> seq;
    for (double c : cuts)
        if (c < tv - 1e-12) seq.push_back(c);
    seq.push_back(tv);
    const auto ws = detail::ladder_weights(seq);
    std::vector<double> out(x_grid.size(), 0.0);
    TensorIndex<D> vt;
    vt.n.fill(static_cast<int>(vrule.size()));
    for (std::size_t xi = 0; xi < x_grid.size(); ++xi) {
        const auto& x = x_grid[xi];
        typename chars::CharacteristicsSolution<D>::Cache cache;
        double acc = 0;
        for (std::size_t f = 0; f < vt.size(); ++f) {
            const auto idx = vt.decode(f);
            Vec<D> v{};
            double wv = 1;
            for (std::size_t a = 0; a < D; ++a) {
                v[a] = vrule.nodes[idx[a]];
                wv *= vrule.weights[idx[a]];
            }
            Vec<D> w = axpy(-tv, v, x);
            const auto& path = sol.path_in(cache, w, v);
            for (std::size_t j = 0; j + 1 < seq.size(); ++j) {
                const double s = seq[j];
                const Vec<D> Y = path.Y(s), W = path.W(s);
                Vec<D> z1 = axpy(-(tv - s), v, x);
                Vec<D> z2 = z1, vW = v;
                for (std::size_t c = 0; c < D; ++c) {
                    z2[c] += Y[c];
                    vW[c] += W[c];
                }
                const Vec<D> e1 = E.value(s, z1), e2 = E.value(s, z2);
                double t1 = 0, t2 = 0;
                for (std::size_t c = 0; c < D; ++c) {
                    std::array<int, D> al{};
                    al[c] = 1;
                    t1 += e1[c] * mu.derivative(al, v);
                    t2 += e2[c] * mu.derivative(al, vW);
                }
                acc += wv * ws[j] * (t1 - t2);
            }
        }
        out[xi] = acc;
    }
    return out;
}

/// R_L(t, x) alone: the reaction along free trajectories, same ladder and
/// velocity nodes as the bilinear difference.
template <std::size_t D>
std::vector<double> linear_reaction(const chars::ForceField<D>& E, const Equilibrium<D>& mu,
                                    double tv, const std::vector<Vec<D>>& x_grid,
                                    const Rule1D& vrule, std::vector<double> cuts) {
    if (vrule.size() == 0) throw std::invalid_argument("linear_reaction: empty velocity rule");
    std::vector<double> seq;
    for (double c : cuts)
        if (c < tv - 1e-12) seq.push_back(c);
    seq.push_back(tv);
    const auto ws = detail::ladder_weights(seq);
    std::vector<double> out(x_grid.size(), 0.0);
    TensorIndex<D> vt;
    vt.n.fill(static_cast<int>(vrule.size()));
    for (std::size_t xi = 0; xi < x_grid.size(); ++xi) {
        const auto& x = x_grid[xi];
        double acc = 0;
        for (std::size_t f = 0; f < vt.size(); ++f) {
            const auto idx = vt.decode(f);
            Vec<D> v{};
            double wv = 1;
            for (std::size_t a = 0; a < D; ++a) {
                v[a] = vrule.nodes[idx[a]];
                wv *= vrule.weights[idx[a]];
            }
            for (std::size_t j = 0; j + 1 < seq.size(); ++j) {
                const double s = seq[j];
                const Vec<D> e1 = E.value(s, axpy(-(tv - s), v, x));
                for (std::size_t c = 0; c < D; ++c) {
                    std::array<int, D> al{};
                    al[c] = 1;
                    acc += wv * ws[j] * e1[c] * mu.derivative(al, v);
                }
            }
        }
        out[xi] = acc;
    }
    return out;
}

// ---------------------------------------------------------------------------
// production route: straightened-coordinate sweeps on the band box
// ---------------------------------------------------------------------------

/// Grids for the sweep engine. The band box carries modes |m| <= n/2 - 1 per
/// axis; cuts are the s-quadrature ladder (shared by every slice), slices
/// the output times. All times must be multiples of dt.
struct SweepGrids {
    SpectralBox<3> box;
    Rule1D vrule;
    double dt = 0.25;
    double T = 20;
    std::vector<double> cuts;
    std::vector<double> slices;
};

/// Spectral reaction terms per slice on the band box. T = R_L - R_NL is the
/// cancellation-preserving difference; C is the initial-term flow correction
/// I - I_free (empty when no datum is supplied).
struct ReactionTerms {
    std::vector<double> slices;
    std::vector<std::vector<cplx>> T_hat, RL_hat, C_hat;
};

namespace detail {

struct MuTensors {
    double g1[3];
    double g2[3][3];
    double g3[3][6];  // symmetric pairs (00,01,02,11,12,22)
    double scale = 0;
};

inline constexpr int kPairA[6] = {0, 0, 0, 1, 1, 2};
inline constexpr int kPairB[6] = {0, 1, 2, 1, 2, 2};
inline constexpr double kPairHalf[6] = {0.5, 1.0, 1.0, 0.5, 1.0, 0.5};  // 1/2 * multiplicity

inline MuTensors mu_tensors(const Equilibrium<3>& eq, const Vec<3>& v) {
    MuTensors m{};
    auto d = [&](int a, int b, int c) {
        std::array<int, 3> al{};
        al[a]++;
        if (b >= 0) al[b]++;
        if (c >= 0) al[c]++;
        return eq.derivative(al, v);
    };
    for (int a = 0; a < 3; ++a) {
        m.g1[a] = d(a, -1, -1);
        for (int b = 0; b < 3; ++b) m.g2[a][b] = d(a, b, -1);
        for (int q = 0; q < 6; ++q) m.g3[a][q] = d(a, kPairA[q], kPairB[q]);
        m.scale = std::max(m.scale, std::abs(m.g1[a]));
    }
    return m;
}

}  // namespace detail

/// Backward sweep over velocity nodes. drive and flow are the field spectra
/// on the band box per fine time step (usually identical; a zero flow
/// freezes the trajectories and zeroes T exactly). f0, when given, adds the
/// initial-term correction C via joint second-order Taylor of the separable
/// datum in the full-interval deviations.
inline ReactionTerms reaction_sweep(const Equilibrium<3>& eq,
                                    const std::vector<std::array<std::vector<cplx>, 3>>& drive,
                                    const std::vector<std::array<std::vector<cplx>, 3>>& flow,
                                    const SweepGrids& g, const InitialDatum<3>* f0 = nullptr) {
    const std::size_t np = g.box.size();
    const int nk = detail::fine_index(g.T, g.dt, "reaction_sweep") + 1;
    if (drive.size() != static_cast<std::size_t>(nk) || flow.size() != drive.size())
        throw std::invalid_argument("reaction_sweep: field history length mismatch");
    for (int c = 0; c < 3; ++c)
        if (drive[0][c].size() != np || flow[0][c].size() != np)
            throw std::invalid_argument("reaction_sweep: spectrum size mismatch");
    if (g.cuts.empty() || g.cuts.front() != 0)
        throw std::invalid_argument("reaction_sweep: cut ladder must start at 0");
    if (g.slices.empty()) throw std::invalid_argument("reaction_sweep: no slices");
    if (!std::is_sorted(g.cuts.begin(), g.cuts.end()) ||
        !std::is_sorted(g.slices.begin(), g.slices.end()))
        throw std::invalid_argument("reaction_sweep: cuts and slices must ascend");
    if (g.box.n > 64) throw std::invalid_argument("reaction_sweep: band box exceeds 64 per axis");

    const int n = g.box.n;
    const auto ti = g.box.indexer();
    detail::BoxTransform<3> bt(g.box);

    std::vector<Vec<3>> xiv(np);
    for (std::size_t p = 0; p < np; ++p) xiv[p] = g.box.xi(ti.decode(p));

    std::vector<int> cut_idx, slc_idx;
    for (double c : g.cuts) cut_idx.push_back(detail::fine_index(c, g.dt, "reaction_sweep cuts"));
    for (double s : g.slices)
        slc_idx.push_back(detail::fine_index(s, g.dt, "reaction_sweep slices"));
    const int ns = static_cast<int>(g.slices.size());
    std::vector<char> is_cut(static_cast<std::size_t>(nk), 0);
    for (int k : cut_idx) {
        if (k < 0 || k >= nk) throw std::invalid_argument("reaction_sweep: cut outside horizon");
        is_cut[static_cast<std::size_t>(k)] = 1;
    }
    for (int k : slc_idx)
        if (k < 0 || k >= nk) throw std::invalid_argument("reaction_sweep: slice outside horizon");

    // per-slice cut weights (composite trapezoid over cuts < slice, endpoint
    // gap closed at the slice where the integrand vanishes)
    std::vector<std::vector<double>> slc_w(ns);  // indexed like cut_idx, 0 when unused
    for (int i = 0; i < ns; ++i) {
        std::vector<double> seq;
        for (double c : g.cuts)
            if (c < g.slices[i] - 1e-12) seq.push_back(c);
        seq.push_back(g.slices[i]);
        const auto w = detail::ladder_weights(seq);
        slc_w[i].assign(cut_idx.size(), 0.0);
        for (std::size_t j = 0; j + 1 < seq.size(); ++j) slc_w[i][j] = w[j];
    }

    // velocity-node tensors and the negligibility floors
    const auto nv1 = static_cast<int>(g.vrule.size());
    TensorIndex<3> vt;
    vt.n.fill(nv1);
    std::vector<detail::MuTensors> mu_all(vt.size());
    std::vector<double> av_scale(vt.size(), 0.0);
    double gscale = 0, av_gscale = 0;
    for (std::size_t f = 0; f < vt.size(); ++f) {
        const auto idx = vt.decode(f);
        Vec<3> v{g.vrule.nodes[idx[0]], g.vrule.nodes[idx[1]], g.vrule.nodes[idx[2]]};
        mu_all[f] = detail::mu_tensors(eq, v);
        gscale = std::max(gscale, mu_all[f].scale);
        if (f0) {
            double s = 1;
            for (int a = 0; a < 3; ++a)
                s *= std::max({std::abs(f0->av[a]->value(v[a])),
                               std::abs(f0->av[a]->derivative(1, v[a])),
                               std::abs(f0->av[a]->derivative(2, v[a]))});
            av_scale[f] = s;
            av_gscale = std::max(av_gscale, s);
        }
    }

    // datum axis tables on the w-grid (value, d1, d2 per axis sample)
    double ax_tab[3][3][64];  // [axis][deriv][grid]
    if (f0) {
        for (int a = 0; a < 3; ++a)
            for (int j = 0; j < n; ++j) {
                const double z = (j - n / 2) * g.box.h();
                ax_tab[a][0][j] = f0->ax[a]->value(z);
                ax_tab[a][1][j] = f0->ax[a]->derivative(1, z);
                ax_tab[a][2][j] = f0->ax[a]->derivative(2, z);
            }
    }

    ReactionTerms out;
    out.slices = g.slices;
    out.T_hat.assign(ns, std::vector<cplx>(np, cplx(0, 0)));
    out.RL_hat.assign(ns, std::vector<cplx>(np, cplx(0, 0)));
    if (f0) out.C_hat.assign(ns, std::vector<cplx>(np, cplx(0, 0)));

    // scratch, reused across velocity nodes
    std::vector<cplx> twist(np);
    std::vector<double> cum0[3], cum1[3], shPrev[3], shCur[3];
    for (int c = 0; c < 3; ++c) {
        cum0[c].assign(np, 0.0);
        cum1[c].assign(np, 0.0);
        shPrev[c].assign(np, 0.0);
        shCur[c].assign(np, 0.0);
    }
    std::vector<std::array<std::vector<double>, 3>> snap0(ns), snap1(ns);
    for (int i = 0; i < ns; ++i)
        for (int c = 0; c < 3; ++c) {
            snap0[i][c].assign(np, 0.0);
            snap1[i][c].assign(np, 0.0);
        }
    std::vector<std::vector<double>> Tv(ns), RLv(ns), Cv(ns);
    for (int i = 0; i < ns; ++i) {
        Tv[i].assign(np, 0.0);
        RLv[i].assign(np, 0.0);
        if (f0) Cv[i].assign(np, 0.0);
    }
    std::vector<double> E0[3], dE[3][3], ddE[3][6];
    for (int c = 0; c < 3; ++c) {
        for (int a = 0; a < 3; ++a) dE[c][a].assign(np, 0.0);
        for (int q = 0; q < 6; ++q) ddE[c][q].assign(np, 0.0);
        E0[c].assign(np, 0.0);
    }

    const double bwd_scale = 1.0 / std::pow(g.box.L, 3);
    const double fwd_scale = std::pow(g.box.h(), 3);

    auto build_twist = [&](const Vec<3>& v, double tau, double sign, double amp) {
        cplx tab[3][64];
        for (int a = 0; a < 3; ++a)
            for (int j = 0; j < n; ++j)
                tab[a][j] = std::exp(cplx(0, sign * tau * (2 * pi * g.box.mode_of(j) / g.box.L) *
                                                 v[a]));
        // parity and transform scale folded in; single multiply per mode later
        std::size_t p = 0;
        for (int j0 = 0; j0 < n; ++j0)
            for (int j1 = 0; j1 < n; ++j1) {
                const cplx t01 = tab[0][j0] * tab[1][j1];
                for (int j2 = 0; j2 < n; ++j2, ++p)
                    twist[p] = t01 * tab[2][j2] * (amp * bt.parity[p]);
            }
    };
    // inverse transform of modes * twist * (i xi_a)(i xi_b) into out
    auto shifted = [&](const std::vector<cplx>& modes, int a, int b, std::vector<double>& dst) {
        if (a < 0) {
            for (std::size_t p = 0; p < np; ++p) bt.buf[p] = modes[p] * twist[p];
        } else if (b < 0) {
            for (std::size_t p = 0; p < np; ++p)
                bt.buf[p] = modes[p] * twist[p] * cplx(0, xiv[p][a]);
        } else {
            for (std::size_t p = 0; p < np; ++p)
                bt.buf[p] = modes[p] * twist[p] * (-xiv[p][a] * xiv[p][b]);
        }
        bt.exec_bwd();
        for (std::size_t p = 0; p < np; ++p) dst[p] = bt.buf[p].real();
    };

    for (std::size_t fv = 0; fv < vt.size(); ++fv) {
        const auto& mu = mu_all[fv];
        const auto idx = vt.decode(fv);
        const Vec<3> v{g.vrule.nodes[idx[0]], g.vrule.nodes[idx[1]], g.vrule.nodes[idx[2]]};
        const double wv = g.vrule.weights[idx[0]] * g.vrule.weights[idx[1]] *
                          g.vrule.weights[idx[2]];
        const bool mu_live = mu.scale >= 1e-15 * gscale;
        const bool datum_live = f0 && av_scale[fv] >= 1e-15 * av_gscale;
        if (!mu_live && !datum_live) continue;
        double av0[3] = {0, 0, 0}, av1[3] = {0, 0, 0}, av2[3] = {0, 0, 0};
        if (f0)
            for (int a = 0; a < 3; ++a) {
                av0[a] = f0->av[a]->value(v[a]);
                av1[a] = f0->av[a]->derivative(1, v[a]);
                av2[a] = f0->av[a]->derivative(2, v[a]);
            }

        for (int c = 0; c < 3; ++c) {
            std::memset(cum0[c].data(), 0, np * sizeof(double));
            std::memset(cum1[c].data(), 0, np * sizeof(double));
        }
        for (int i = 0; i < ns; ++i) {
            std::memset(Tv[i].data(), 0, np * sizeof(double));
            std::memset(RLv[i].data(), 0, np * sizeof(double));
            if (f0) std::memset(Cv[i].data(), 0, np * sizeof(double));
        }

        for (int k = nk - 1; k >= 0; --k) {
            const double tau = g.dt * k;
            build_twist(v, tau, +1.0, bwd_scale);
            for (int c = 0; c < 3; ++c) shifted(flow[k][c], -1, -1, shCur[c]);
            if (k < nk - 1) {
                const double tp = g.dt * (k + 1);
                for (int c = 0; c < 3; ++c) {
                    double* c0 = cum0[c].data();
                    double* c1 = cum1[c].data();
                    const double* scur = shCur[c].data();
                    const double* sprev = shPrev[c].data();
                    const double hw = 0.5 * g.dt;
                    for (std::size_t p = 0; p < np; ++p) {
                        c0[p] += hw * (scur[p] + sprev[p]);
                        c1[p] += hw * (tau * scur[p] + tp * sprev[p]);
                    }
                }
            }
            for (int c = 0; c < 3; ++c) std::swap(shPrev[c], shCur[c]);
            for (int i = 0; i < ns; ++i)
                if (slc_idx[i] == k)
                    for (int c = 0; c < 3; ++c) {
                        snap0[i][c] = cum0[c];
                        snap1[i][c] = cum1[c];
                    }
            if (!mu_live || !is_cut[static_cast<std::size_t>(k)]) continue;
            std::size_t cj = 0;
            while (cut_idx[cj] != k) ++cj;

            for (int c = 0; c < 3; ++c) {
                shifted(drive[k][c], -1, -1, E0[c]);
                for (int a = 0; a < 3; ++a) shifted(drive[k][c], a, -1, dE[c][a]);
                for (int q = 0; q < 6; ++q)
                    shifted(drive[k][c], detail::kPairA[q], detail::kPairB[q], ddE[c][q]);
            }
            const double s = tau;
            for (int i = 0; i < ns; ++i) {
                const double ws = slc_w[i][cj];
                if (ws == 0) continue;
                double* T_i = Tv[i].data();
                double* RL_i = RLv[i].data();
                for (std::size_t p = 0; p < np; ++p) {
                    double Y[3], W[3];
                    for (int c = 0; c < 3; ++c) {
                        const double d0 = cum0[c][p] - snap0[i][c][p];
                        const double d1 = cum1[c][p] - snap1[i][c][p];
                        Y[c] = d1 - s * d0;
                        W[c] = -d0;
                    }
                    const double YY[6] = {Y[0] * Y[0], Y[0] * Y[1], Y[0] * Y[2],
                                          Y[1] * Y[1], Y[1] * Y[2], Y[2] * Y[2]};
                    const double WW[6] = {W[0] * W[0], W[0] * W[1], W[0] * W[2],
                                          W[1] * W[1], W[1] * W[2], W[2] * W[2]};
                    double term1 = 0, term2 = 0;
                    for (int c = 0; c < 3; ++c) {
                        term1 += E0[c][p] * mu.g1[c];
                        double e2 = E0[c][p];
                        double gg = mu.g1[c];
                        for (int a = 0; a < 3; ++a) {
                            e2 += dE[c][a][p] * Y[a];
                            gg += mu.g2[c][a] * W[a];
                        }
                        for (int q = 0; q < 6; ++q) {
                            e2 += detail::kPairHalf[q] * YY[q] * ddE[c][q][p];
                            gg += detail::kPairHalf[q] * WW[q] * mu.g3[c][q];
                        }
                        term2 += e2 * gg;
                    }
                    T_i[p] += ws * (term1 - term2);
                    RL_i[p] += ws * term1;
                }
            }
        }

        // initial-term correction: datum composed with the full-interval
        // deviation minus the datum itself, per-axis quadratic Taylor
        if (datum_live) {
            for (int i = 0; i < ns; ++i) {
                double* C_i = Cv[i].data();
                std::size_t p = 0;
                for (int j0 = 0; j0 < n; ++j0)
                    for (int j1 = 0; j1 < n; ++j1)
                        for (int j2 = 0; j2 < n; ++j2, ++p) {
                            double Y[3], W[3];
                            for (int c = 0; c < 3; ++c) {
                                Y[c] = cum1[c][p] - snap1[i][c][p];
                                W[c] = -(cum0[c][p] - snap0[i][c][p]);
                            }
                            const int jj[3] = {j0, j1, j2};
                            double moved = f0->eps, frozen = f0->eps;
                            for (int a = 0; a < 3; ++a) {
                                const double x0 = ax_tab[a][0][jj[a]];
                                const double x1 = ax_tab[a][1][jj[a]];
                                const double x2 = ax_tab[a][2][jj[a]];
                                moved *= (x0 + Y[a] * (x1 + 0.5 * Y[a] * x2)) *
                                         (av0[a] + W[a] * (av1[a] + 0.5 * W[a] * av2[a]));
                                frozen *= x0 * av0[a];
                            }
                            C_i[p] += moved - frozen;
                        }
            }
        }

        // accumulate into the spectral outputs with the w -> x shear twist
        for (int i = 0; i < ns; ++i) {
            if (slc_idx[i] == 0) continue;  // all-zero contributions at t = 0
            build_twist(v, g.slices[i], -1.0, wv * fwd_scale);
            auto push = [&](const std::vector<double>& src, std::vector<cplx>& dst) {
                for (std::size_t p = 0; p < np; ++p) bt.buf[p] = src[p];
                bt.exec_fwd();
                for (std::size_t p = 0; p < np; ++p) dst[p] += bt.buf[p] * twist[p];
            };
            if (mu_live) {
                push(Tv[i], out.T_hat[i]);
                push(RLv[i], out.RL_hat[i]);
            }
            if (datum_live) push(Cv[i], out.C_hat[i]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// forcing assembly
// ---------------------------------------------------------------------------

/// Weighted derivative ledgers of a density history: instantaneous entries
/// per derivative order and time, and the running (monotone) suprema.
struct LedgerTable {
    int d = 3;
    std::vector<double> t;
    std::vector<std::vector<double>> by_k;  // [k][time]: <t>^k L1 + <t>^{d+k} Linf

    /// max over k <= rows, s <= tv (the forcing-side ledger, no log factor).
    double y_ledger(double tv) const {
        double worst = 0;
        for (std::size_t j = 0; j < t.size() && t[j] <= tv + 1e-12; ++j)
            for (const auto& row : by_k) worst = std::max(worst, row[j]);
        return worst;
    }
    /// sup_{s<=tv} max_k entry / log(2+s) (the bootstrap ledger).
    double n_ledger(double tv) const {
        double worst = 0;
        for (std::size_t j = 0; j < t.size() && t[j] <= tv + 1e-12; ++j)
            for (const auto& row : by_k)
                worst = std::max(worst, row[j] / std::log(2 + t[j]));
        return worst;
    }
};

/// Per-order derivative norms via (i xi)^alpha spectral multipliers; the
/// k-norm is the max over multi-indices of order k.
template <std::size_t D>
LedgerTable density_ledger(const DensityHistory<D>& rho, int N) {
    LedgerTable led;
    led.d = static_cast<int>(D);
    led.t = rho.t;
    led.by_k.assign(static_cast<std::size_t>(N) + 1, std::vector<double>(rho.t.size(), 0.0));
    const auto ti = rho.box.indexer();
    detail::BoxTransform<D> bt(rho.box);
    double cell = 1;
    for (std::size_t a = 0; a < D; ++a) cell *= rho.box.h();
    std::vector<cplx> work(rho.box.size());
    for (std::size_t j = 0; j < rho.t.size(); ++j) {
        const double br = bracket(rho.t[j]);
        for (int k = 0; k <= N; ++k) {
            double l1 = 0, li = 0;
            for (const auto& al : multi_indices<D>(k)) {
                for (std::size_t p = 0; p < work.size(); ++p) {
                    double mult = 1;
                    const auto xi = rho.box.xi(ti.decode(p));
                    for (std::size_t a = 0; a < D; ++a)
                        for (int q = 0; q < al[a]; ++q) mult *= xi[a];
                    work[p] = rho.spectra[j][p] * mult;  // |i^k| = 1, norms only
                }
                bt.backward(work);
                double al1 = 0, ali = 0;
                for (const auto& c : work) {
                    const double a = std::abs(c);
                    al1 += a * cell;
                    ali = std::max(ali, a);
                }
                l1 = std::max(l1, al1);
                li = std::max(li, ali);
            }
            led.by_k[k][j] = std::pow(br, k) * l1 + std::pow(br, static_cast<double>(D) + k) * li;
        }
    }
    return led;
}

/// S = I + R_L - R_NL with each piece kept as its own history, plus the
/// forcing-side derivative ledger. When the driving field vanishes the
/// reaction and correction terms are exact zeros and S == I bit for bit.
template <std::size_t D>
struct ForcingDecomposition {
    DensityHistory<D> I_term, RL_term, RNL_term, S;
    LedgerTable ledger;  // of S, orders 0..N
};

struct ForcingOptions {
    int N = 2;
    int band_n = 12;
    int v_nodes = 12;
    std::vector<double> slices;  // default: graded ladder over [0, T]
    std::vector<double> cuts;
    double instability_threshold = 1e6;
};

/// Graded default ladders: fine steps early, stretching multiples of dt late.
inline std::vector<double> graded_times(double T, double dt, double first, double growth) {
    std::vector<double> out{0};
    double step = first;
    while (out.back() < T - 1e-9) {
        double next = std::min(T, out.back() + step);
        next = std::round(next / dt) * dt;
        if (next <= out.back() + 1e-9) next = out.back() + dt;
        out.push_back(std::min(next, T));
        step *= growth;
    }
    return out;
}

/// Fast-route forcing assembly on the full box (D = 3). The reaction terms
/// live on the band box (modes |m| < band_n/2) and are zero-padded onto the
/// carrier; between slices they interpolate as cubics in t. The initial
/// term is the periodized free density (exact per time step) plus the
/// sweep's flow correction.
inline ForcingDecomposition<3> assemble_forcing(const InitialDatum<3>& f0,
                                                const PeriodicField<3>& E,
                                                const Equilibrium<3>& eq,
                                                const ForcingOptions& opt = {}) {
    const SpectralBox<3>& box = E.box;
    const double dt = E.dt, T = E.t.back();
    if (opt.band_n > box.n || opt.band_n < 4 || opt.band_n % 2)
        throw std::invalid_argument("assemble_forcing: bad band size");

    SweepGrids g;
    g.box = SpectralBox<3>{box.L, opt.band_n};
    g.vrule = eq.velocity_rule(opt.v_nodes);
    g.dt = dt;
    g.T = T;
    g.slices = opt.slices.empty() ? graded_times(T, dt, 2 * dt, 1.32) : opt.slices;
    g.cuts = opt.cuts.empty() ? graded_times(T, dt, dt, 1.3) : opt.cuts;
    if (g.slices.front() != 0 || std::abs(g.slices.back() - T) > 1e-9)
        throw std::invalid_argument("assemble_forcing: slices must span [0, T]");

    // restrict the field spectra to the strict band |m| <= band_n/2 - 1
    const auto bi = g.box.indexer();
    const int half = opt.band_n / 2;
    std::vector<long> band_map(g.box.size(), -1);
    for (std::size_t p = 0; p < g.box.size(); ++p) {
        const auto k = bi.decode(p);
        std::array<int, 3> kc{};
        bool keep = true;
        for (int a = 0; a < 3; ++a) {
            const int m = g.box.mode_of(k[a]);
            if (std::abs(m) >= half) keep = false;
            kc[a] = m >= 0 ? m : m + box.n;
        }
        if (!keep) continue;
        std::size_t flat = 0;
        for (int a = 0; a < 3; ++a)
            flat = flat * static_cast<std::size_t>(box.n) + static_cast<std::size_t>(kc[a]);
        band_map[p] = static_cast<long>(flat);
    }
    std::vector<std::array<std::vector<cplx>, 3>> fieldspec(E.t.size());
    for (std::size_t j = 0; j < E.t.size(); ++j)
        for (int c = 0; c < 3; ++c) {
            fieldspec[j][c].assign(g.box.size(), cplx(0, 0));
            for (std::size_t p = 0; p < g.box.size(); ++p)
                if (band_map[p] >= 0)
                    fieldspec[j][c][p] = E.spectra[j][c][static_cast<std::size_t>(band_map[p])];
        }

    const ReactionTerms rt = reaction_sweep(eq, fieldspec, fieldspec, g, &f0);

    // assemble histories on the carrier box
    ForcingDecomposition<3> F;
    F.I_term = DensityHistory<3>::zeros(box, dt, T);
    F.RL_term = DensityHistory<3>::zeros(box, dt, T);
    F.RNL_term = DensityHistory<3>::zeros(box, dt, T);
    F.S = DensityHistory<3>::zeros(box, dt, T);

    FreeDensitySpectra<3> free(f0, box);
    std::vector<cplx> That(box.size()), RLhat(box.size()), Chat(box.size());
    std::vector<cplx> sampT(rt.slices.size()), sampRL(rt.slices.size()), sampC(rt.slices.size());
    for (std::size_t j = 0; j < F.S.t.size(); ++j) {
        const double tv = F.S.t[j];
        std::vector<cplx> Ihat = free.spectrum(tv);
        std::fill(That.begin(), That.end(), cplx(0, 0));
        std::fill(RLhat.begin(), RLhat.end(), cplx(0, 0));
        std::fill(Chat.begin(), Chat.end(), cplx(0, 0));
        for (std::size_t p = 0; p < g.box.size(); ++p) {
            if (band_map[p] < 0) continue;
            for (std::size_t i = 0; i < rt.slices.size(); ++i) {
                sampT[i] = rt.T_hat[i][p];
                sampRL[i] = rt.RL_hat[i][p];
                sampC[i] = rt.C_hat[i][p];
            }
            const auto q = static_cast<std::size_t>(band_map[p]);
            That[q] = detail::interp_graded(rt.slices, sampT, tv);
            RLhat[q] = detail::interp_graded(rt.slices, sampRL, tv);
            Chat[q] = detail::interp_graded(rt.slices, sampC, tv);
        }
        for (std::size_t p = 0; p < box.size(); ++p) Ihat[p] += Chat[p];
        std::vector<cplx> Shat(box.size());
        for (std::size_t p = 0; p < box.size(); ++p) Shat[p] = Ihat[p] + That[p];
        std::vector<cplx> RNLhat(box.size());
        for (std::size_t p = 0; p < box.size(); ++p) RNLhat[p] = RLhat[p] - That[p];
        F.I_term.set_spectrum(j, std::move(Ihat));
        F.RL_term.set_spectrum(j, RLhat);
        F.RNL_term.set_spectrum(j, std::move(RNLhat));
        F.S.set_spectrum(j, std::move(Shat));
    }

    F.ledger = density_ledger(F.S, opt.N);
    for (const auto& row : F.ledger.by_k)
        for (double e : row)
            if (!(e < opt.instability_threshold))
                throw std::runtime_error("assemble_forcing: ledger entry " + format_double(e) +
                                         " exceeds the instability threshold");
    return F;
}

/// Exact-route forcing assembly for small grids (any D): per-point
/// trajectories on the full x-grid at every output time. The same
/// decomposition, affordable for smoke tests and cross-checks only.
template <std::size_t D>
ForcingDecomposition<D> assemble_forcing_exact(const InitialDatum<D>& f0,
                                               const PeriodicField<D>& E,
                                               const Equilibrium<D>& eq, const Rule1D& vrule,
                                               const std::vector<double>& cuts, int N = 2,
                                               double tol = 1e-9) {
    const SpectralBox<D>& box = E.box;
    const double dt = E.dt, T = E.t.back();
    ForcingDecomposition<D> F;
    F.I_term = DensityHistory<D>::zeros(box, dt, T);
    F.RL_term = DensityHistory<D>::zeros(box, dt, T);
    F.RNL_term = DensityHistory<D>::zeros(box, dt, T);
    F.S = DensityHistory<D>::zeros(box, dt, T);

    const auto ti = box.indexer();
    std::vector<Vec<D>> xg(box.size());
    for (std::size_t p = 0; p < box.size(); ++p) xg[p] = box.x(ti.decode(p));
    const std::vector<double> vaxis(vrule.nodes.begin(), vrule.nodes.end());

    for (std::size_t j = 0; j < F.S.t.size(); ++j) {
        const double tv = F.S.t[j];
        chars::CharacteristicsSolution<D> sol(E, tv, {0.0}, vaxis, tol);
        const auto I = initial_term(f0, sol, tv, xg, vrule);
        const auto Tx = bilinear_reaction(E, eq, sol, tv, xg, vrule, cuts);
        const auto RL = linear_reaction(E, eq, tv, xg, vrule, cuts);
        std::vector<double> S(box.size()), RNL(box.size());
        for (std::size_t p = 0; p < box.size(); ++p) {
            S[p] = I[p] + Tx[p];
            RNL[p] = RL[p] - Tx[p];
        }
        F.I_term.set_values(j, I);
        F.RL_term.set_values(j, RL);
        F.RNL_term.set_values(j, RNL);
        F.S.set_values(j, S);
    }
    F.ledger = density_ledger(F.S, N);
    return F;
}

// ---------------------------------------------------------------------------
// linear response
// ---------------------------------------------------------------------------

namespace detail {

/// Forward-substitution solve of rho = S + trapezoid(K * rho) on the K grid.
template <typename T>
std::vector<T> volterra_direct(const std::vector<double>& K, const std::vector<T>& S, double dt) {
    const std::size_t n = S.size();
    std::vector<T> rho(n);
    const double lhs = 1 - 0.5 * dt * K[0];
    if (std::abs(lhs) < 0.2)
        throw std::runtime_error("volterra_direct: dt too coarse for implicit weight");
    rho[0] = S[0] / lhs;
    for (std::size_t j = 1; j < n; ++j) {
        T conv = 0.5 * K[j] * rho[0];
        for (std::size_t i = 1; i < j; ++i) conv += K[j - i] * rho[i];
        rho[j] = (S[j] + dt * conv) / lhs;
    }
    return rho;
}

}  // namespace detail

/// Kernel and resolvent tables on the distinct mode radii of a box.
template <std::size_t D>
kernel::ModeKernelTable box_kernel_table(const Equilibrium<D>& eq, const SpectralBox<D>& box,
                                         double dt, double T) {
    const auto ti = box.indexer();
    std::vector<double> radii;
    for (std::size_t p = 0; p < box.size(); ++p) {
        const double r = norm2<D>(box.xi(ti.decode(p)));
        bool seen = false;
        for (double q : radii)
            if (std::abs(q - r) < 1e-12) seen = true;
        if (!seen) radii.push_back(r);
    }
    std::sort(radii.begin(), radii.end());
    return kernel::build_mode_kernel_table(eq, dt, T, radii);
}

/// rho(t) = S(t) + int_0^t G(t-s) star S(s) ds, per mode on the resolvent
/// time grid. S is upsampled in t by clamped cubics; outputs land back on
/// S's grid, whose steps must be integer multiples of the resolvent step
/// within the resolvent horizon (mismatch is a configuration error).
template <std::size_t D>
DensityHistory<D> linear_response(const DensityHistory<D>& S, const kernel::ResolventTable& res) {
    const double ratio_d = S.dt / res.dt;
    const auto ratio = static_cast<long>(std::lround(ratio_d));
    if (ratio < 1 || std::abs(ratio_d - static_cast<double>(ratio)) > 1e-9)
        throw std::invalid_argument("linear_response: history step not a multiple of the resolvent step");
    if (res.t.back() + 1e-9 < S.t.back())
        throw std::invalid_argument("linear_response: resolvent horizon too short");

    const auto ti = S.box.indexer();
    // map each mode radius to its resolvent row
    std::vector<std::size_t> row(S.box.size());
    for (std::size_t p = 0; p < S.box.size(); ++p) {
        const double r = norm2<D>(S.box.xi(ti.decode(p)));
        const auto it = std::lower_bound(res.r.begin(), res.r.end(), r - 1e-9);
        if (it == res.r.end() || std::abs(*it - r) > 1e-9)
            throw std::invalid_argument("linear_response: mode radius missing from resolvent");
        row[p] = static_cast<std::size_t>(it - res.r.begin());
    }

    const std::size_t nc = S.t.size();
    const auto nf = static_cast<std::size_t>(ratio) * (nc - 1) + 1;
    DensityHistory<D> rho = DensityHistory<D>::zeros(S.box, S.dt, S.t.back());
    std::vector<cplx> samp(nc), fine(nf);
    std::vector<std::vector<cplx>> out(nc, std::vector<cplx>(S.box.size()));
    for (std::size_t p = 0; p < S.box.size(); ++p) {
        for (std::size_t j = 0; j < nc; ++j) samp[j] = S.spectra[j][p];
        for (std::size_t i = 0; i < nf; ++i)
            fine[i] = detail::interp_uniform(S.t, samp, S.dt, res.dt * static_cast<double>(i));
        const auto& G = res.G[row[p]];
        for (std::size_t j = 0; j < nc; ++j) {
            const std::size_t jf = static_cast<std::size_t>(ratio) * j;
            cplx conv = 0;
            if (jf > 0) {
                conv = 0.5 * (G[jf] * fine[0] + G[0] * fine[jf]);
                for (std::size_t i = 1; i < jf; ++i) conv += G[jf - i] * fine[i];
                conv *= res.dt;
            }
            out[j][p] = samp[j] + conv;
        }
    }
    for (std::size_t j = 0; j < nc; ++j) rho.set_spectrum(j, std::move(out[j]));
    return rho;
}

/// Residual of the direct equation rho - trapezoid(K * rho) - S, checked on
/// the resolvent grid for a sample of modes; the production solve and this
/// identity share their quadrature, so the defect is pure route disagreement.
template <std::size_t D>
double duhamel_residual(const DensityHistory<D>& S, const kernel::ModeKernelTable& ktab,
                        const kernel::ResolventTable& res, std::size_t mode_stride = 97) {
    const auto ti = S.box.indexer();
    const auto ratio = static_cast<std::size_t>(std::lround(S.dt / res.dt));
    const std::size_t nf = ratio * (S.t.size() - 1) + 1;
    double worst = 0;
    for (std::size_t p = 0; p < S.box.size(); p += mode_stride) {
        const double r = norm2<D>(S.box.xi(ti.decode(p)));
        std::size_t mk = 0, mg = 0;
        while (mk < ktab.r.size() && std::abs(ktab.r[mk] - r) > 1e-9) ++mk;
        while (mg < res.r.size() && std::abs(res.r[mg] - r) > 1e-9) ++mg;
        if (mk == ktab.r.size() || mg == res.r.size())
            throw std::invalid_argument("duhamel_residual: mode radius missing");
        std::vector<cplx> samp(S.t.size());
        for (std::size_t j = 0; j < S.t.size(); ++j) samp[j] = S.spectra[j][p];
        std::vector<cplx> fine(nf);
        for (std::size_t i = 0; i < nf; ++i)
            fine[i] = detail::interp_uniform(S.t, samp, S.dt, res.dt * static_cast<double>(i));
        // resolvent route on the fine grid
        const auto& G = res.G[mg];
        const auto& K = ktab.K[mk];
        std::vector<cplx> rhof(nf);
        double scale = 0;
        for (std::size_t j = 0; j < nf; ++j) {
            cplx conv = 0;
            if (j > 0) {
                conv = 0.5 * (G[j] * fine[0] + G[0] * fine[j]);
                for (std::size_t i = 1; i < j; ++i) conv += G[j - i] * fine[i];
                conv *= res.dt;
            }
            rhof[j] = fine[j] + conv;
            scale = std::max(scale, std::abs(rhof[j]));
        }
        if (scale == 0) continue;
        for (std::size_t j = 0; j < nf; ++j) {
            cplx conv = 0;
            if (j > 0) {
                conv = 0.5 * (K[j] * rhof[0] + K[0] * rhof[j]);
                for (std::size_t i = 1; i < j; ++i) conv += K[j - i] * rhof[i];
                conv *= res.dt;
            }
            worst = std::max(worst, std::abs(rhof[j] - conv - fine[j]) / scale);
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// radial decay study (whole-space norms via comoving boxes)
// ---------------------------------------------------------------------------

struct RadialStudyRow {
    double t = 0;
    int k = 0;
    double L1 = 0, Linf = 0;
    double ledger = 0;  // (<t>^k L1 + <t>^{d+k} Linf) / log(2+t)
};

/// Solve the scalar Volterra equation per mode radius for a radial synthetic
/// forcing, then measure physical-space derivative norms of rho on comoving
/// boxes. Norm conventions match the kernel module (max over patterns).
template <std::size_t D>
std::vector<RadialStudyRow> radial_response_study(
    const Equilibrium<D>& eq, const std::function<double(double, double)>& S_hat, double dt,
    double T, const std::vector<double>& t_samples, int k_max,
    const kernel::BoxPolicy& policy = {true, 40, 25, 1.6}, int n_box = 64) {
    static_assert(D == 3, "radial study uses the 3-d box assembly");
    std::vector<double> radii;
    for (int i = 0; i <= 56; ++i) radii.push_back(0.02 * std::pow(2.0, i / 7.0));
    auto ktab = kernel::build_mode_kernel_table(eq, dt, T, radii);
    const std::size_t nt = ktab.t.size();
    std::vector<std::vector<double>> rho(radii.size());
    for (std::size_t m = 0; m < radii.size(); ++m) {
        std::vector<double> S(nt);
        for (std::size_t j = 0; j < nt; ++j) S[j] = S_hat(ktab.t[j], radii[m]);
        rho[m] = detail::volterra_direct(ktab.K[m], S, dt);
    }
    std::vector<RadialStudyRow> rows;
    for (double tv : t_samples) {
        const auto j = static_cast<std::size_t>(std::lround(tv / dt));
        if (j >= nt) throw std::out_of_range("radial_response_study: sample beyond horizon");
        kernel::RadialProfile prof;
        prof.r = radii;
        prof.v.resize(radii.size());
        for (std::size_t m = 0; m < radii.size(); ++m) prof.v[m] = rho[m][j];
        SpectralBox<3> box{policy.side(tv), n_box};
        for (int k = 0; k <= k_max; ++k) {
            RadialStudyRow row;
            row.t = tv;
            row.k = k;
            for (const auto& al : kernel::detail::sorted_patterns(k)) {
                const auto nr = kernel::detail::box_norms(box, prof, al);
                row.L1 = std::max(row.L1, nr.L1);
                row.Linf = std::max(row.Linf, nr.Linf);
            }
            const double br = bracket(tv);
            row.ledger = (std::pow(br, k) * row.L1 + std::pow(br, 3 + k) * row.Linf) /
                         std::log(2 + tv);
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace svp::response
