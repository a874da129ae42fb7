#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "svp/core.hpp"

// Shifted characteristics of a decaying force field. With w = x - tv the
// backward flow from time t is reconstructed from the deviation pair
//   X_{s,t}(x,v) = x - (t-s) v + Y_{s,t}(w, v),
//   V_{s,t}(x,v) = v + W_{s,t}(w, v),
// where Y solves the fixed point
//   Y_{s,t}(w,v) = int_s^t (tau-s) E(tau, w + tau v + Y_{tau,t}(w,v)) dtau
// and W = dY/ds = -int_s^t E along the same trajectory. Each phase point is
// an independent one-dimensional fixed point in s, solved by Picard iteration
// on Gauss-Legendre panels; the converged force samples then evaluate Y and W
// smoothly at any s.

namespace svp::chars {

/// Time-dependent force field on R^d. value(s, x) is the only thing the
/// characteristics solver ever asks of it.
template <std::size_t D>
class ForceField {
  public:
    virtual ~ForceField() = default;
    virtual Vec<D> value(double s, const Vec<D>& x) const = 0;
};

template <std::size_t D>
class ZeroField final : public ForceField<D> {
  public:
    Vec<D> value(double, const Vec<D>&) const override { return Vec<D>{}; }
};

template <std::size_t D>
class AnalyticField final : public ForceField<D> {
  public:
    using Fn = std::function<Vec<D>(double, const Vec<D>&)>;
    explicit AnalyticField(Fn f) : f_(std::move(f)) {}
    Vec<D> value(double s, const Vec<D>& x) const override { return f_(s, x); }

  private:
    Fn f_;
};

/// Synthetic field matching the assumed decay envelope with equality:
/// component j is eps log(2+s) (1+s)^{-d} cos(y_j / (1+s)), so
/// sup_y |grad_x^k E(s)| = eps log(2+s) (1+s)^{-d-k} for every k, and the
/// spatial scale grows with s the way freely transported densities spread.
template <std::size_t D>
class SaturatingField final : public ForceField<D> {
  public:
    explicit SaturatingField(double eps) : eps_(eps) {}

    double amplitude(double s) const {
        return eps_ * std::log(2 + s) * std::pow(1 + s, -static_cast<double>(D));
    }
    double sup_grad(double s, int k) const { return amplitude(s) * std::pow(1 + s, -k); }

    Vec<D> value(double s, const Vec<D>& y) const override {
        Vec<D> e{};
        const double a = amplitude(s);
        for (std::size_t j = 0; j < D; ++j) e[j] = a * std::cos(y[j] / (1 + s));
        return e;
    }
    /// m-th derivative of component j in its own coordinate; cross space
    /// derivatives vanish identically for this field.
    double axis_derivative(double s, int m, double yj) const {
        const double u = yj / (1 + s);
        const double trig[4] = {std::cos(u), -std::sin(u), -std::cos(u), std::sin(u)};
        return amplitude(s) * std::pow(1 + s, -m) * trig[m % 4];
    }
    double eps() const { return eps_; }

  private:
    double eps_;
};

namespace detail {

/// m-fold nested first central difference: integer offsets m - 2j with
/// weights binom(m, j) (-1)^j. The (2h)^{-m} factor is applied by callers so
/// on-grid and off-grid stencils scale consistently.
inline std::vector<std::pair<int, double>> stencil1d(int m) {
    std::vector<std::pair<int, double>> s;
    double c = 1;
    for (int j = 0; j <= m; ++j) {
        s.emplace_back(m - 2 * j, (j % 2 ? -1.0 : 1.0) * c);
        c = c * (m - j) / (j + 1);
    }
    return s;
}

// Gauss-Legendre nodes and weights on [0, 1], four points per panel.
inline constexpr std::array<double, 4> gl_node = {
    0.0694318442029737124, 0.3300094782075718676, 0.6699905217924281324, 0.9305681557970262876};
inline constexpr std::array<double, 4> gl_weight = {
    0.1739274225687269287, 0.3260725774312730713, 0.3260725774312730713, 0.1739274225687269287};

/// Integrals of the Lagrange cubics through the panel nodes:
///   P0[j](u) = int_0^u ell_j,  P1[j](u) = int_0^u u' ell_j(u') du'.
/// The partial-panel quadrature weights of the fixed point are then
///   q_j(u) = int_u^1 (u'-u) ell_j du' = P1[j](1)-P1[j](u) - u (P0[j](1)-P0[j](u)),
///   r_j(u) = int_u^1 ell_j du'       = P0[j](1)-P0[j](u).
struct PanelTables {
    std::array<std::array<double, 5>, 4> P0{};
    std::array<std::array<double, 6>, 4> P1{};
    std::array<double, 4> P0_1{}, P1_1{};
};

inline const PanelTables& panel_tables() {
    static const PanelTables tables = [] {
        PanelTables t{};
        for (int j = 0; j < 4; ++j) {
            std::array<double, 4> c{};
            c[0] = 1;
            for (int m = 0; m < 4; ++m) {
                if (m == j) continue;
                const double den = gl_node[j] - gl_node[m];
                std::array<double, 4> n{};
                for (int i = 0; i < 3; ++i) {
                    n[i + 1] += c[i] / den;
                    n[i] -= gl_node[m] * c[i] / den;
                }
                n[3] -= gl_node[m] * c[3] / den;
                c = n;
            }
            for (int i = 0; i < 4; ++i) {
                t.P0[j][i + 1] = c[i] / (i + 1);
                t.P1[j][i + 2] = c[i] / (i + 2);
            }
            for (double v : t.P0[j]) t.P0_1[j] += v;
            for (double v : t.P1[j]) t.P1_1[j] += v;
        }
        return t;
    }();
    return tables;
}

inline double polyval(const double* c, int n, double u) {
    double v = 0;
    for (int i = n - 1; i >= 0; --i) v = v * u + c[i];
    return v;
}

inline double weight_y(int j, double u) {
    const auto& t = panel_tables();
    return (t.P1_1[j] - polyval(t.P1[j].data(), 6, u)) -
           u * (t.P0_1[j] - polyval(t.P0[j].data(), 5, u));
}
inline double weight_w(int j, double u) {
    const auto& t = panel_tables();
    return t.P0_1[j] - polyval(t.P0[j].data(), 5, u);
}

/// weight_y evaluated at the panel's own nodes, used every Picard sweep.
inline const std::array<std::array<double, 4>, 4>& node_weights_y() {
    static const auto a = [] {
        std::array<std::array<double, 4>, 4> w{};
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) w[i][j] = weight_y(j, gl_node[i]);
        return w;
    }();
    return a;
}

template <std::size_t D>
Vec<D> solve_linear(std::array<std::array<double, D>, D> a, Vec<D> b) {
    for (std::size_t col = 0; col < D; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < D; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-14) throw std::runtime_error("solve_linear: singular matrix");
        std::swap(a[piv], a[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = col + 1; r < D; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < D; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    Vec<D> x{};
    for (std::size_t r = D; r-- > 0;) {
        double s = b[r];
        for (std::size_t c = r + 1; c < D; ++c) s -= a[r][c] * x[c];
        x[r] = s / a[r][r];
    }
    return x;
}

template <std::size_t D, typename F>
void for_each_tensor(const std::vector<double>& axis, F&& fn) {
    std::array<std::size_t, D> oi{};
    for (;;) {
        Vec<D> p{};
        for (std::size_t a = 0; a < D; ++a) p[a] = axis[oi[a]];
        fn(p);
        std::size_t a = 0;
        while (a < D && ++oi[a] == axis.size()) {
            oi[a] = 0;
            ++a;
        }
        if (a == D) break;
    }
}

}  // namespace detail

/// Force field given by samples on uniform time slices over the cube
/// [x0, x0 + (nx-1) dx]^d: cubic (Catmull-Rom) in each space axis, linear in
/// time. Points outside the cube read as zero, times clamp to the covered
/// range. Layout: samples[(it * npoints + p) * d + c], p row-major with the
/// first axis slowest.
template <std::size_t D>
class FieldHistory final : public ForceField<D> {
  public:
    FieldHistory(double t0, double dt, int nt, double x0, double dx, int nx,
                 std::vector<double> samples)
        : t0_(t0), dt_(dt), nt_(nt), x0_(x0), dx_(dx), nx_(nx), samples_(std::move(samples)) {
        if (nt < 1 || nx < 2 || dt <= 0 || dx <= 0)
            throw std::invalid_argument("FieldHistory: bad grid");
        npts_ = 1;
        for (std::size_t a = 0; a < D; ++a) npts_ *= static_cast<std::size_t>(nx_);
        if (samples_.size() != static_cast<std::size_t>(nt_) * npts_ * D)
            throw std::invalid_argument("FieldHistory: sample count does not match the grid");
        for (double v : samples_)
            if (!std::isfinite(v)) throw std::invalid_argument("FieldHistory: non-finite sample");
    }

    static FieldHistory sample(const ForceField<D>& f, double t0, double dt, int nt, double x0,
                               double dx, int nx) {
        std::size_t npts = 1;
        for (std::size_t a = 0; a < D; ++a) npts *= static_cast<std::size_t>(nx);
        std::vector<double> raw(static_cast<std::size_t>(nt) * npts * D);
        for (int it = 0; it < nt; ++it)
            for (std::size_t p = 0; p < npts; ++p) {
                Vec<D> x{};
                std::size_t rem = p;
                for (std::size_t a = D; a-- > 0;) {
                    x[a] = x0 + dx * static_cast<double>(rem % nx);
                    rem /= static_cast<std::size_t>(nx);
                }
                const Vec<D> e = f.value(t0 + dt * it, x);
                for (std::size_t c = 0; c < D; ++c)
                    raw[(static_cast<std::size_t>(it) * npts + p) * D + c] = e[c];
            }
        return FieldHistory(t0, dt, nt, x0, dx, nx, std::move(raw));
    }

    Vec<D> value(double s, const Vec<D>& x) const override {
        if (nt_ == 1) return slice_value(0, x);
        double u = std::clamp((s - t0_) / dt_, 0.0, static_cast<double>(nt_ - 1));
        const int it = std::min(static_cast<int>(u), nt_ - 2);
        const double th = u - it;
        Vec<D> lo = slice_value(it, x);
        if (th == 0) return lo;
        const Vec<D> hi = slice_value(it + 1, x);
        for (std::size_t c = 0; c < D; ++c) lo[c] = (1 - th) * lo[c] + th * hi[c];
        return lo;
    }

    /// max over slices of <s>^{d+k} sup over interior points and patterns
    /// |mu| = k of nested on-grid central differences: the sampled version of
    /// the assumed field envelope.
    double decay_ledger(int k) const {
        if (k < 0) throw std::invalid_argument("decay_ledger: negative order");
        double worst = 0;
        for (const auto& mu : multi_indices<D>(k)) {
            std::array<std::vector<std::pair<int, double>>, D> st;
            double scale = 1;
            for (std::size_t a = 0; a < D; ++a) {
                st[a] = detail::stencil1d(mu[a]);
                scale *= std::pow(2 * dx_, -mu[a]);
            }
            for (int it = 0; it < nt_; ++it) {
                double sup = 0;
                for (std::size_t p = 0; p < npts_; ++p) {
                    std::array<int, D> idx{};
                    std::size_t rem = p;
                    bool interior = true;
                    for (std::size_t a = D; a-- > 0;) {
                        idx[a] = static_cast<int>(rem % static_cast<std::size_t>(nx_));
                        rem /= static_cast<std::size_t>(nx_);
                        interior = interior && idx[a] >= mu[a] && idx[a] + mu[a] < nx_;
                    }
                    if (!interior) continue;
                    for (std::size_t c = 0; c < D; ++c) {
                        double acc = 0;
                        std::array<std::size_t, D> oi{};
                        for (;;) {
                            double coef = scale;
                            std::size_t flat = 0;
                            for (std::size_t a = 0; a < D; ++a) {
                                coef *= st[a][oi[a]].second;
                                flat = flat * static_cast<std::size_t>(nx_) +
                                       static_cast<std::size_t>(idx[a] + st[a][oi[a]].first);
                            }
                            acc += coef * samples_[(static_cast<std::size_t>(it) * npts_ + flat) * D + c];
                            std::size_t a = 0;
                            while (a < D && ++oi[a] == st[a].size()) {
                                oi[a] = 0;
                                ++a;
                            }
                            if (a == D) break;
                        }
                        sup = std::max(sup, std::abs(acc));
                    }
                }
                worst = std::max(worst, std::pow(bracket(t0_ + dt_ * it), static_cast<double>(D) + k) * sup);
            }
        }
        return worst;
    }

    double t0() const { return t0_; }
    double dt() const { return dt_; }
    int nt() const { return nt_; }
    double x0() const { return x0_; }
    double dx() const { return dx_; }
    int nx() const { return nx_; }

  private:
    Vec<D> slice_value(int it, const Vec<D>& x) const {
        std::array<int, D> base{};
        std::array<std::array<double, 4>, D> wt{};
        for (std::size_t a = 0; a < D; ++a) {
            const double u = (x[a] - x0_) / dx_;
            const double fl = std::floor(u);
            base[a] = static_cast<int>(fl) - 1;
            const double f = u - fl, f2 = f * f, f3 = f2 * f;
            wt[a] = {0.5 * (-f3 + 2 * f2 - f), 0.5 * (3 * f3 - 5 * f2 + 2),
                     0.5 * (-3 * f3 + 4 * f2 + f), 0.5 * (f3 - f2)};
        }
        Vec<D> out{};
        std::array<std::size_t, D> o{};
        for (;;) {
            double w = 1;
            bool inside = true;
            std::size_t flat = 0;
            for (std::size_t a = 0; a < D; ++a) {
                const int idx = base[a] + static_cast<int>(o[a]);
                if (idx < 0 || idx >= nx_) {
                    inside = false;
                    break;
                }
                w *= wt[a][o[a]];
                flat = flat * static_cast<std::size_t>(nx_) + static_cast<std::size_t>(idx);
            }
            if (inside && w != 0) {
                const double* s = &samples_[(static_cast<std::size_t>(it) * npts_ + flat) * D];
                for (std::size_t c = 0; c < D; ++c) out[c] += w * s[c];
            }
            std::size_t a = 0;
            while (a < D && ++o[a] == 4) {
                o[a] = 0;
                ++a;
            }
            if (a == D) break;
        }
        return out;
    }

    double t0_, dt_;
    int nt_;
    double x0_, dx_;
    int nx_;
    std::size_t npts_ = 0;
    std::vector<double> samples_;
};

/// Converged deviation path at one straightened phase point (w, v). The force
/// samples h(tau) = E(tau, w + tau v + Y(tau)) on graded Gauss-Legendre
/// panels (finer near tau = 0 where decaying fields vary fastest, never wider
/// than one time unit) determine Y(s) = int_s^t (tau-s) h dtau and
/// W(s) = -int_s^t h dtau for any s in [0, t]: partial panel by cubic
/// quadrature, full panels by suffix sums.
template <std::size_t D>
struct PointPath {
    double t = 0;
    int panels = 0;
    int iterations = 0;
    std::vector<double> pan_a, pan_w;  // panel starts and widths
    std::vector<double> node_s;
    std::vector<Vec<D>> force;
    std::vector<Vec<D>> suffix0, suffix1;  // per panel p: sums over panels > p of int h, int tau h

    Vec<D> Y(double s) const { return eval(s, true); }
    Vec<D> W(double s) const { return eval(s, false); }

  private:
    Vec<D> eval(double s, bool second_moment) const {
        Vec<D> out{};
        if (!(s < t) || panels == 0) return out;  // s >= t: zero by the boundary condition
        s = std::max(s, 0.0);
        int p = static_cast<int>(std::upper_bound(pan_a.begin(), pan_a.end(), s) - pan_a.begin()) - 1;
        p = std::clamp(p, 0, panels - 1);
        const double width = pan_w[p];
        const double u = (s - pan_a[p]) / width;
        const double scale = second_moment ? width * width : width;
        for (int j = 0; j < 4; ++j) {
            const double wq = second_moment ? detail::weight_y(j, u) : detail::weight_w(j, u);
            const auto& h = force[static_cast<std::size_t>(4 * p + j)];
            for (std::size_t c = 0; c < D; ++c) out[c] += scale * wq * h[c];
        }
        for (std::size_t c = 0; c < D; ++c) {
            if (second_moment)
                out[c] += suffix1[p][c] - s * suffix0[p][c];
            else
                out[c] = -(out[c] + suffix0[p][c]);
        }
        return out;
    }
};

/// Picard iteration for the deviation fixed point at one (w, v). Stops when
/// the sup change of the node values drops below tol; raises an error when
/// the iteration has stopped contracting (the smallness regime is violated).
template <std::size_t D>
PointPath<D> solve_point(const ForceField<D>& field, double t, const Vec<D>& w, const Vec<D>& v,
                         double tol = 1e-10, int max_iter = 200) {
    if (t < 0 || tol <= 0) throw std::invalid_argument("solve_point: t >= 0 and tol > 0 required");
    PointPath<D> path;
    path.t = t;
    for (double a = 0, grade = 0.25; a < t - 1e-12;) {
        const double width = std::min(grade, t - a);
        path.pan_a.push_back(a);
        path.pan_w.push_back(width);
        a += width;
        grade = std::min(1.0, 1.5 * grade);
    }
    path.panels = static_cast<int>(path.pan_a.size());
    const int n = 4 * path.panels;
    path.node_s.resize(static_cast<std::size_t>(n));
    for (int p = 0; p < path.panels; ++p)
        for (int j = 0; j < 4; ++j)
            path.node_s[static_cast<std::size_t>(4 * p + j)] =
                path.pan_a[p] + detail::gl_node[j] * path.pan_w[p];
    path.force.assign(static_cast<std::size_t>(n), Vec<D>{});
    path.suffix0.assign(static_cast<std::size_t>(path.panels), Vec<D>{});
    path.suffix1.assign(static_cast<std::size_t>(path.panels), Vec<D>{});
    if (path.panels == 0) {
        path.iterations = 1;
        return path;
    }

    std::vector<Vec<D>> y(static_cast<std::size_t>(n), Vec<D>{});
    std::vector<Vec<D>> s0(static_cast<std::size_t>(path.panels)), s1(static_cast<std::size_t>(path.panels));
    const auto& ay = detail::node_weights_y();
    auto sweep = [&](bool update) {
        for (int i = 0; i < n; ++i) {
            Vec<D> z = axpy(path.node_s[static_cast<std::size_t>(i)], v, w);
            for (std::size_t c = 0; c < D; ++c) z[c] += y[static_cast<std::size_t>(i)][c];
            path.force[static_cast<std::size_t>(i)] =
                field.value(path.node_s[static_cast<std::size_t>(i)], z);
        }
        for (int p = 0; p < path.panels; ++p) {
            s0[p] = Vec<D>{};
            s1[p] = Vec<D>{};
            for (int j = 0; j < 4; ++j) {
                const std::size_t i = static_cast<std::size_t>(4 * p + j);
                for (std::size_t c = 0; c < D; ++c) {
                    const double m = path.pan_w[p] * detail::gl_weight[j] * path.force[i][c];
                    s0[p][c] += m;
                    s1[p][c] += path.node_s[i] * m;
                }
            }
        }
        for (int p = path.panels - 1; p >= 0; --p)
            for (std::size_t c = 0; c < D; ++c) {
                const bool last = p + 1 == path.panels;
                path.suffix0[p][c] = last ? 0 : path.suffix0[p + 1][c] + s0[p + 1][c];
                path.suffix1[p][c] = last ? 0 : path.suffix1[p + 1][c] + s1[p + 1][c];
            }
        double diff = 0;
        if (!update) return diff;
        for (int p = 0; p < path.panels; ++p)
            for (int j = 0; j < 4; ++j) {
                const std::size_t i = static_cast<std::size_t>(4 * p + j);
                Vec<D> yi{};
                for (int jj = 0; jj < 4; ++jj)
                    for (std::size_t c = 0; c < D; ++c)
                        yi[c] += path.pan_w[p] * path.pan_w[p] * ay[j][jj] *
                                 path.force[static_cast<std::size_t>(4 * p + jj)][c];
                for (std::size_t c = 0; c < D; ++c) {
                    yi[c] += path.suffix1[p][c] - path.node_s[i] * path.suffix0[p][c];
                    diff = std::max(diff, std::abs(yi[c] - y[i][c]));
                }
                y[i] = yi;
            }
        return diff;
    };

    double prev = std::numeric_limits<double>::infinity();
    for (int iter = 1;; ++iter) {
        const double diff = sweep(true);
        path.iterations = iter;
        if (!std::isfinite(diff)) throw std::runtime_error("characteristics fixed point diverged");
        if (diff < tol) break;
        if (iter >= 50 && diff >= prev)
            throw std::runtime_error("characteristics fixed point diverged");
        if (iter >= max_iter)
            throw std::runtime_error("characteristics fixed point: no convergence");
        prev = diff;
    }
    sweep(false);  // force and suffix sums consistent with the converged nodes
    return path;
}

/// Backward-flow solution at final time t over a sampled (w, v) phase grid.
/// Deviation paths are solved per point on demand and cached, so derivative
/// stencils and the straightening Newton share converged trajectories. Bulk
/// scans pass their own scratch cache to keep the resident set small.
template <std::size_t D>
class CharacteristicsSolution {
  public:
    using Key = std::array<double, 2 * D>;
    using Cache = std::map<Key, PointPath<D>>;

    CharacteristicsSolution(const ForceField<D>& field, double t, std::vector<double> w_axis,
                            std::vector<double> v_axis, double tol = 1e-10, double fd_step = 0.1)
        : field_(&field),
          t_(t),
          tol_(tol),
          h_(fd_step),
          w_axis_(std::move(w_axis)),
          v_axis_(std::move(v_axis)) {
        if (t < 0 || tol <= 0 || fd_step <= 0)
            throw std::invalid_argument("CharacteristicsSolution: bad parameters");
        if (w_axis_.empty() || v_axis_.empty())
            throw std::invalid_argument("CharacteristicsSolution: empty phase grid");
    }

    const PointPath<D>& path(const Vec<D>& w, const Vec<D>& v) const {
        return path_in(cache_, w, v);
    }
    const PointPath<D>& path_in(Cache& cache, const Vec<D>& w, const Vec<D>& v) const {
        Key k{};
        for (std::size_t a = 0; a < D; ++a) {
            k[a] = w[a];
            k[D + a] = v[a];
        }
        auto it = cache.find(k);
        if (it == cache.end()) {
            it = cache.emplace(k, solve_point(*field_, t_, w, v, tol_)).first;
            max_iterations_ = std::max(max_iterations_, it->second.iterations);
        }
        return it->second;
    }

    Vec<D> deviation_Y(double s, const Vec<D>& w, const Vec<D>& v) const { return path(w, v).Y(s); }
    Vec<D> deviation_W(double s, const Vec<D>& w, const Vec<D>& v) const { return path(w, v).W(s); }

    Vec<D> position(double s, const Vec<D>& x, const Vec<D>& v) const {
        Vec<D> r = path(straightened(x, v), v).Y(s);
        for (std::size_t c = 0; c < D; ++c) r[c] += x[c] - (t_ - s) * v[c];
        return r;
    }
    Vec<D> velocity(double s, const Vec<D>& x, const Vec<D>& v) const {
        Vec<D> r = path(straightened(x, v), v).W(s);
        for (std::size_t c = 0; c < D; ++c) r[c] += v[c];
        return r;
    }

    /// Phi with X_{s,t}(x,v) = x - (t-s)(v + Phi); zero at s = t by continuity.
    Vec<D> phi(double s, const Vec<D>& x, const Vec<D>& v) const {
        Vec<D> r{};
        if (s >= t_) return r;
        r = path(straightened(x, v), v).Y(s);
        for (std::size_t c = 0; c < D; ++c) r[c] = -r[c] / (t_ - s);
        return r;
    }

    /// Nested central v-difference of pattern mu applied to Y (or W) at step
    /// fd_step. Sets *warn when the result sits within 10x of the rounding
    /// floor of the stencil.
    Vec<D> grad_v(double s, const Vec<D>& w, const Vec<D>& v, const std::array<int, D>& mu,
                  bool of_Y, Cache* scratch = nullptr, bool* warn = nullptr) const {
        Cache& cache = scratch ? *scratch : cache_;
        std::array<std::vector<std::pair<int, double>>, D> st;
        double scale = 1;
        int order = 0;
        for (std::size_t a = 0; a < D; ++a) {
            st[a] = detail::stencil1d(mu[a]);
            scale *= std::pow(2 * h_, -mu[a]);
            order += mu[a];
        }
        Vec<D> acc{};
        double amax = 0;
        std::array<std::size_t, D> oi{};
        for (;;) {
            double coef = scale;
            Vec<D> vv = v;
            for (std::size_t a = 0; a < D; ++a) {
                coef *= st[a][oi[a]].second;
                vv[a] += h_ * st[a][oi[a]].first;
            }
            const auto& p = path_in(cache, w, vv);
            const Vec<D> val = of_Y ? p.Y(s) : p.W(s);
            for (std::size_t c = 0; c < D; ++c) {
                acc[c] += coef * val[c];
                amax = std::max(amax, std::abs(val[c]));
            }
            std::size_t a = 0;
            while (a < D && ++oi[a] == st[a].size()) {
                oi[a] = 0;
                ++a;
            }
            if (a == D) break;
        }
        if (warn) {
            const double floor = 1e-16 * amax * std::pow(h_, -order);
            double mag = 0;
            for (std::size_t c = 0; c < D; ++c) mag = std::max(mag, std::abs(acc[c]));
            if (mag > 0 && mag < 10 * floor) *warn = true;
        }
        return acc;
    }

    /// First central w-difference of Y along one axis.
    Vec<D> grad_x_Y(double s, const Vec<D>& w, const Vec<D>& v, std::size_t axis,
                    Cache* scratch = nullptr) const {
        Cache& cache = scratch ? *scratch : cache_;
        Vec<D> wp = w, wm = w;
        wp[axis] += h_;
        wm[axis] -= h_;
        Vec<D> r = path_in(cache, wp, v).Y(s);
        const Vec<D> lo = path_in(cache, wm, v).Y(s);
        for (std::size_t c = 0; c < D; ++c) r[c] = (r[c] - lo[c]) / (2 * h_);
        return r;
    }

    /// Straightening map: solves u + Phi_{s,t}(x, u) = v by Newton so that
    /// |X_{s,t}(x, Psi) - (x - (t-s) v)| < newton_tol. Requires the measured
    /// contraction condition |grad_v Phi| < 1/2 at the starting point.
    Vec<D> straighten(double s, const Vec<D>& x, const Vec<D>& v, double newton_tol = 1e-10) const {
        if (s >= t_) return v;
        if (phi_jacobian_norm(s, x, v) >= 0.5)
            throw std::runtime_error("straighten: |grad_v Phi| >= 1/2, not certified invertible");
        Vec<D> u = v;
        for (int it = 0; it < 40; ++it) {
            Vec<D> g = phi(s, x, u);
            double res = 0;
            for (std::size_t c = 0; c < D; ++c) {
                g[c] += u[c] - v[c];
                res = std::max(res, std::abs(g[c]));
            }
            if ((t_ - s) * res < newton_tol) return u;
            auto j = phi_jacobian(s, x, u);
            for (std::size_t c = 0; c < D; ++c) j[c][c] += 1;
            const Vec<D> delta = detail::solve_linear<D>(j, g);
            for (std::size_t c = 0; c < D; ++c) u[c] -= delta[c];
        }
        throw std::runtime_error("straighten: Newton did not reach tolerance");
    }

    int max_iterations() const { return max_iterations_; }
    double final_time() const { return t_; }
    double tolerance() const { return tol_; }
    double fd_step() const { return h_; }
    const std::vector<double>& w_axis() const { return w_axis_; }
    const std::vector<double>& v_axis() const { return v_axis_; }
    const ForceField<D>& field() const { return *field_; }

  private:
    Vec<D> straightened(const Vec<D>& x, const Vec<D>& v) const {
        Vec<D> w{};
        for (std::size_t c = 0; c < D; ++c) w[c] = x[c] - t_ * v[c];
        return w;
    }
    std::array<std::array<double, D>, D> phi_jacobian(double s, const Vec<D>& x,
                                                      const Vec<D>& u) const {
        const double hj = 1e-5;
        std::array<std::array<double, D>, D> j{};
        for (std::size_t a = 0; a < D; ++a) {
            Vec<D> up = u, um = u;
            up[a] += hj;
            um[a] -= hj;
            const Vec<D> fp = phi(s, x, up), fm = phi(s, x, um);
            for (std::size_t c = 0; c < D; ++c) j[c][a] = (fp[c] - fm[c]) / (2 * hj);
        }
        return j;
    }
    double phi_jacobian_norm(double s, const Vec<D>& x, const Vec<D>& u) const {
        const auto j = phi_jacobian(s, x, u);
        double n = 0;
        for (std::size_t c = 0; c < D; ++c) {
            double row = 0;
            for (std::size_t a = 0; a < D; ++a) row += std::abs(j[c][a]);
            n = std::max(n, row);
        }
        return n;
    }

    const ForceField<D>* field_;
    double t_, tol_, h_;
    std::vector<double> w_axis_, v_axis_;
    mutable Cache cache_;
    mutable int max_iterations_ = 0;
};

/// Solve the deviation fixed point over the tensor grid {w_axis}^d x {v_axis}^d.
/// Grid paths are solved eagerly so the recorded iteration count covers every
/// base point.
template <std::size_t D>
CharacteristicsSolution<D> picard_solve_characteristics(const ForceField<D>& field, double t,
                                                        const std::vector<double>& w_axis,
                                                        const std::vector<double>& v_axis,
                                                        double tol = 1e-10, double fd_step = 0.1) {
    CharacteristicsSolution<D> sol(field, t, w_axis, v_axis, tol, fd_step);
    detail::for_each_tensor<D>(sol.w_axis(), [&](const Vec<D>& w) {
        detail::for_each_tensor<D>(sol.v_axis(), [&](const Vec<D>& v) { sol.path(w, v); });
    });
    return sol;
}

template <std::size_t D>
struct StackReport {
    int order = 0;
    std::vector<double> s;
    std::vector<double> sup_Y, sup_W;  // per s: max over grid, patterns |mu| = order, components
    bool precision_warning = false;
};

/// Sup norms over the phase grid of every order-k nested v-difference of Y
/// and W, per sample time.
template <std::size_t D>
StackReport<D> differentiate_characteristics(const CharacteristicsSolution<D>& sol, int k,
                                             const std::vector<double>& s_samples) {
    if (k < 0) throw std::invalid_argument("differentiate_characteristics: negative order");
    StackReport<D> rep;
    rep.order = k;
    rep.s = s_samples;
    rep.sup_Y.assign(s_samples.size(), 0);
    rep.sup_W.assign(s_samples.size(), 0);
    const auto patterns = multi_indices<D>(k);
    detail::for_each_tensor<D>(sol.w_axis(), [&](const Vec<D>& w) {
        detail::for_each_tensor<D>(sol.v_axis(), [&](const Vec<D>& v) {
            typename CharacteristicsSolution<D>::Cache scratch;
            for (const auto& mu : patterns)
                for (std::size_t i = 0; i < s_samples.size(); ++i) {
                    bool warn = false;
                    for (bool of_Y : {true, false}) {
                        const Vec<D> g = sol.grad_v(s_samples[i], w, v, mu, of_Y, &scratch, &warn);
                        double mag = 0;
                        for (std::size_t c = 0; c < D; ++c) mag = std::max(mag, std::abs(g[c]));
                        (of_Y ? rep.sup_Y : rep.sup_W)[i] =
                            std::max((of_Y ? rep.sup_Y : rep.sup_W)[i], mag);
                    }
                    rep.precision_warning = rep.precision_warning || warn;
                }
        });
    });
    return rep;
}

/// Sup over the phase grid of |Phi_{s,t}| per sample time, taking the grid w
/// values as the straightened coordinate.
template <std::size_t D>
std::vector<double> phi_field(const CharacteristicsSolution<D>& sol,
                              const std::vector<double>& s_samples) {
    std::vector<double> sup(s_samples.size(), 0);
    const double t = sol.final_time();
    detail::for_each_tensor<D>(sol.w_axis(), [&](const Vec<D>& w) {
        detail::for_each_tensor<D>(sol.v_axis(), [&](const Vec<D>& v) {
            const auto& p = sol.path(w, v);
            for (std::size_t i = 0; i < s_samples.size(); ++i) {
                if (s_samples[i] >= t) continue;
                const Vec<D> y = p.Y(s_samples[i]);
                for (std::size_t c = 0; c < D; ++c)
                    sup[i] = std::max(sup[i], std::abs(y[c]) / (t - s_samples[i]));
            }
        });
    });
    return sup;
}

template <std::size_t D>
Vec<D> straighten_map(const CharacteristicsSolution<D>& sol, double s, const Vec<D>& x,
                      const Vec<D>& v, double newton_tol = 1e-10) {
    return sol.straighten(s, x, v, newton_tol);
}

template <std::size_t D>
struct CharDecayReport {
    std::vector<double> s;
    std::vector<std::vector<double>> sup_Y, sup_W;  // [k][i]
    std::vector<double> sup_gradx_Y;                // [i]
    std::vector<double> ratio_Y, ratio_W;           // [k]
    double ratio_gradx = 0;
    bool precision_warning = false;
};

/// Measured decay of the deviation derivatives against the envelopes
///   eps log(2+s) / (1+s)^{d-2}   for the Y stacks,
///   eps log(2+s) / (1+s)^{d-1}   for the W stacks and grad_x Y,
/// where eps is the forcing amplitude the caller drove with. The ratio
/// entries are the worst sample of measured / envelope.
template <std::size_t D>
CharDecayReport<D> characteristics_decay_report(const CharacteristicsSolution<D>& sol, int k_max,
                                                const std::vector<double>& s_samples, double eps) {
    if (k_max < 0 || eps <= 0)
        throw std::invalid_argument("characteristics_decay_report: bad parameters");
    CharDecayReport<D> rep;
    rep.s = s_samples;
    rep.sup_Y.assign(static_cast<std::size_t>(k_max) + 1, std::vector<double>(s_samples.size(), 0));
    rep.sup_W = rep.sup_Y;
    rep.sup_gradx_Y.assign(s_samples.size(), 0);

    std::vector<std::vector<std::array<int, D>>> patterns;
    for (int k = 0; k <= k_max; ++k) patterns.push_back(multi_indices<D>(k));

    detail::for_each_tensor<D>(sol.w_axis(), [&](const Vec<D>& w) {
        detail::for_each_tensor<D>(sol.v_axis(), [&](const Vec<D>& v) {
            typename CharacteristicsSolution<D>::Cache scratch;
            for (int k = 0; k <= k_max; ++k)
                for (const auto& mu : patterns[static_cast<std::size_t>(k)])
                    for (std::size_t i = 0; i < s_samples.size(); ++i) {
                        bool warn = false;
                        for (bool of_Y : {true, false}) {
                            const Vec<D> g =
                                sol.grad_v(s_samples[i], w, v, mu, of_Y, &scratch, &warn);
                            double mag = 0;
                            for (std::size_t c = 0; c < D; ++c) mag = std::max(mag, std::abs(g[c]));
                            auto& table = of_Y ? rep.sup_Y : rep.sup_W;
                            table[static_cast<std::size_t>(k)][i] =
                                std::max(table[static_cast<std::size_t>(k)][i], mag);
                        }
                        rep.precision_warning = rep.precision_warning || warn;
                    }
            for (std::size_t axis = 0; axis < D; ++axis)
                for (std::size_t i = 0; i < s_samples.size(); ++i) {
                    const Vec<D> g = sol.grad_x_Y(s_samples[i], w, v, axis, &scratch);
                    for (std::size_t c = 0; c < D; ++c)
                        rep.sup_gradx_Y[i] = std::max(rep.sup_gradx_Y[i], std::abs(g[c]));
                }
        });
    });

    rep.ratio_Y.assign(static_cast<std::size_t>(k_max) + 1, 0);
    rep.ratio_W = rep.ratio_Y;
    for (std::size_t i = 0; i < s_samples.size(); ++i) {
        const double s = s_samples[i];
        const double env_y = eps * std::log(2 + s) * std::pow(1 + s, -(static_cast<double>(D) - 2));
        const double env_w = eps * std::log(2 + s) * std::pow(1 + s, -(static_cast<double>(D) - 1));
        for (int k = 0; k <= k_max; ++k) {
            rep.ratio_Y[k] = std::max(rep.ratio_Y[k], rep.sup_Y[k][i] / env_y);
            rep.ratio_W[k] = std::max(rep.ratio_W[k], rep.sup_W[k][i] / env_w);
        }
        rep.ratio_gradx = std::max(rep.ratio_gradx, rep.sup_gradx_Y[i] / env_w);
    }
    return rep;
}

}  // namespace svp::chars
