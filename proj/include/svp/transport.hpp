#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "svp/core.hpp"
#include "svp/equilibrium.hpp"
#include "svp/fit.hpp"

namespace svp::transport {

/// One 1-D factor of a separable datum. Derivatives are analytic; norms over
/// the axis are computed once on a fine grid and cached by order.
class AxisProfile {
  public:
    virtual ~AxisProfile() = default;
    virtual double value(double u) const = 0;
    virtual double derivative(int k, double u) const = 0;
    virtual double support_halfwidth() const = 0;  // |u| beyond which ~0

    double norm_l1(int k) const { return cached(k).first; }
    double norm_linf(int k) const { return cached(k).second; }

  private:
    mutable std::vector<std::pair<double, double>> cache_;
    std::pair<double, double> cached(int k) const {
        if (k < 0) throw std::invalid_argument("AxisProfile: negative order");
        while (cache_.size() <= static_cast<std::size_t>(k)) {
            const int m = static_cast<int>(cache_.size());
            const double half = support_halfwidth();
            const std::size_t n = 4000;
            const double h = 2 * half / static_cast<double>(n - 1);
            double l1 = 0, li = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double u = -half + h * static_cast<double>(i);
                const double a = std::abs(derivative(m, u));
                l1 += (i == 0 || i + 1 == n ? 0.5 : 1.0) * a * h;
                li = std::max(li, a);
            }
            cache_.emplace_back(l1, li);
        }
        return cache_[static_cast<std::size_t>(k)];
    }
};

class GaussianAxis final : public AxisProfile {
  public:
    explicit GaussianAxis(double sigma = 1, double center = 0) : sigma_(sigma), center_(center) {
        if (sigma <= 0) throw std::invalid_argument("GaussianAxis: sigma > 0 required");
    }
    double value(double u) const override {
        return equilibria::gaussian_derivative(sigma_, 0, u - center_);
    }
    double derivative(int k, double u) const override {
        return equilibria::gaussian_derivative(sigma_, k, u - center_);
    }
    double support_halfwidth() const override { return 10 * sigma_ + std::abs(center_); }
    double sigma() const { return sigma_; }
    double center() const { return center_; }

  private:
    double sigma_, center_;
};

/// Mollifier bump exp(-1/(1-s^2)) on |s| < 1, s = u/a; vanishes with all
/// derivatives at |u| = a. psi^(k)(u) = psi(u) Q_k(s) (1-s^2)^{-2k} a^{-k}
/// with the polynomial recurrence
///   Q_{k+1} = (1-s^2)^2 Q_k' + (4k s (1-s^2) - 2s) Q_k.
class BumpAxis final : public AxisProfile {
  public:
    explicit BumpAxis(double halfwidth = 1) : a_(halfwidth) {
        if (halfwidth <= 0) throw std::invalid_argument("BumpAxis: halfwidth > 0 required");
    }
    double value(double u) const override {
        const double s = u / a_;
        if (std::abs(s) >= 1) return 0;
        return std::exp(-1.0 / (1 - s * s));
    }
    double derivative(int k, double u) const override {
        const double s = u / a_;
        if (std::abs(s) >= 1) return 0;
        const auto& Q = poly(k);
        double q = 0;
        for (std::size_t i = Q.size(); i-- > 0;) q = q * s + Q[i];
        const double one = 1 - s * s;
        return value(u) * q * std::pow(one, -2 * k) * std::pow(a_, -k);
    }
    double support_halfwidth() const override { return a_; }
    double halfwidth() const { return a_; }

  private:
    double a_;
    mutable std::vector<std::vector<double>> polys_;  // Q_k coefficients, low order first
    const std::vector<double>& poly(int k) const {
        if (polys_.empty()) polys_.push_back({1.0});
        while (polys_.size() <= static_cast<std::size_t>(k)) {
            const auto& Q = polys_.back();
            const int m = static_cast<int>(polys_.size()) - 1;
            std::vector<double> next(Q.size() + 3, 0.0);
            for (std::size_t i = 0; i < Q.size(); ++i) {
                const double c = Q[i];
                if (i >= 1) {  // (1-s^2)^2 Q' = (1 - 2s^2 + s^4) Q'
                    const double d = c * static_cast<double>(i);
                    next[i - 1] += d;
                    next[i + 1] -= 2 * d;
                    next[i + 3] += d;
                }
                // (4k s (1-s^2) - 2s) Q
                next[i + 1] += (4.0 * m - 2.0) * c;
                next[i + 3] -= 4.0 * m * c;
            }
            while (next.size() > 1 && next.back() == 0.0) next.pop_back();
            polys_.push_back(std::move(next));
        }
        return polys_[static_cast<std::size_t>(k)];
    }
};

/// Separable initial datum eps * prod_i a_i(x_i) * prod_i b_i(v_i). Norm
/// ledgers factorize exactly across axes, and the L1_x Linf_v mixed norm
/// splits because sup over v of a product in independent coordinates is the
/// product of per-axis sups.
template <std::size_t D>
struct InitialDatum {
    double eps = 1;
    std::array<std::shared_ptr<AxisProfile>, D> ax;  // x axes
    std::array<std::shared_ptr<AxisProfile>, D> av;  // v axes

    double value(const Vec<D>& x, const Vec<D>& v) const {
        double p = eps;
        for (std::size_t i = 0; i < D; ++i) p *= ax[i]->value(x[i]) * av[i]->value(v[i]);
        return p;
    }
    double derivative(const std::array<int, D>& kx, const std::array<int, D>& kv,
                      const Vec<D>& x, const Vec<D>& v) const {
        double p = eps;
        for (std::size_t i = 0; i < D; ++i)
            p *= ax[i]->derivative(kx[i], x[i]) * av[i]->derivative(kv[i], v[i]);
        return p;
    }
    double norm_l1xv(const std::array<int, D>& kx, const std::array<int, D>& kv) const {
        double p = std::abs(eps);
        for (std::size_t i = 0; i < D; ++i) p *= ax[i]->norm_l1(kx[i]) * av[i]->norm_l1(kv[i]);
        return p;
    }
    double norm_l1x_linfv(const std::array<int, D>& kx, const std::array<int, D>& kv) const {
        double p = std::abs(eps);
        for (std::size_t i = 0; i < D; ++i) p *= ax[i]->norm_l1(kx[i]) * av[i]->norm_linf(kv[i]);
        return p;
    }
    /// max over derivative patterns |kx| + |kv| = k of L1 + L1_x Linf_v;
    /// the theorem's smallness budget is the max of this over k <= N.
    double ledger(int k) const {
        double worst = 0;
        for (int m = 0; m <= k; ++m)
            for (const auto& kx : multi_indices<D>(m))
                for (const auto& kv : multi_indices<D>(k - m))
                    worst = std::max(worst, norm_l1xv(kx, kv) + norm_l1x_linfv(kx, kv));
        return worst;
    }
    double ledger_max(int N) const {
        double worst = 0;
        for (int k = 0; k <= N; ++k) worst = std::max(worst, ledger(k));
        return worst;
    }
};

template <std::size_t D>
InitialDatum<D> gaussian_datum(double eps = 1, double sigma_x = 1, double sigma_v = 1) {
    InitialDatum<D> f;
    f.eps = eps;
    for (std::size_t i = 0; i < D; ++i) {
        f.ax[i] = std::make_shared<GaussianAxis>(sigma_x);
        f.av[i] = std::make_shared<GaussianAxis>(sigma_v);
    }
    return f;
}

template <std::size_t D>
InitialDatum<D> bump_datum(double eps = 1, double half_x = 2, double half_v = 2) {
    InitialDatum<D> f;
    f.eps = eps;
    for (std::size_t i = 0; i < D; ++i) {
        f.ax[i] = std::make_shared<BumpAxis>(half_x);
        f.av[i] = std::make_shared<BumpAxis>(half_v);
    }
    return f;
}

namespace detail {

/// One axis factor of the free density: c_i(z) = int a^(kx)(z - t v) b^(kv)(v) dv.
/// Computed as the w-form t^{-1} int a^(kx)(w) b^(kv)((z-w)/t) dw when the
/// x-profile is the narrow factor, else in the v-form; the two are the same
/// integral under w = z - t v, so the tensor trapezoid over w demanded by the
/// contract is evaluated axis by axis (separability factorizes it exactly).
struct AxisConvolution {
    const AxisProfile* fx;
    const AxisProfile* fv;
    int kx, kv;
    double t;

    double operator()(double z) const {
        const double hx = fx->support_halfwidth(), hv = fv->support_halfwidth();
        // width-based form selection keeps the node count bounded as t -> 0
        const bool w_form = t * hv >= hx;
        const double half = w_form ? hx : hv;
        const std::size_t n = 1600;
        const double h = 2 * half / static_cast<double>(n - 1);
        double acc = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double u = -half + h * static_cast<double>(i);
            const double w = (i == 0 || i + 1 == n) ? 0.5 : 1.0;
            const double g = w_form ? fx->derivative(kx, u) * fv->derivative(kv, (z - u) / t) / t
                                    : fx->derivative(kx, z - t * u) * fv->derivative(kv, u);
            acc += w * g;
        }
        return acc * h;
    }
};

}  // namespace detail

/// rho_free(t, x) = t^{-d} int f0(w, (x-w)/t) dw, evaluated per point.
/// t = 0 falls back to the direct v-integration (characteristics identity).
template <std::size_t D>
double free_density(const InitialDatum<D>& f0, double t, const Vec<D>& x) {
    double p = f0.eps;
    if (t <= 0) {
        for (std::size_t i = 0; i < D; ++i) {
            double mass = 0;
            const auto& b = *f0.av[i];
            const double half = b.support_halfwidth();
            const std::size_t n = 1600;
            const double h = 2 * half / static_cast<double>(n - 1);
            for (std::size_t j = 0; j < n; ++j)
                mass += ((j == 0 || j + 1 == n) ? 0.5 : 1.0) * b.value(-half + h * j) * h;
            p *= f0.ax[i]->value(x[i]) * mass;
        }
        return p;
    }
    for (std::size_t i = 0; i < D; ++i)
        p *= detail::AxisConvolution{f0.ax[i].get(), f0.av[i].get(), 0, 0, t}(x[i]);
    return p;
}

/// Per-axis scan of a 1-D convolution factor: L1 by trapezoid, Linf by max.
namespace detail {
inline std::pair<double, double> axis_norms(const AxisConvolution& c) {
    const double half = c.fx->support_halfwidth() + c.t * c.fv->support_halfwidth();
    const std::size_t n = 2400;
    const double h = 2 * half / static_cast<double>(n - 1);
    double l1 = 0, li = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = -half + h * static_cast<double>(i);
        const double a = std::abs(c(z));
        l1 += (i == 0 || i + 1 == n ? 0.5 : 1.0) * a * h;
        li = std::max(li, a);
    }
    return {l1, li};
}
}  // namespace detail

struct FreeSlice {
    double t = 0;
    std::vector<double> L1, Linf;  // per k = 0..k_max, max over patterns
};

struct DecayReport {
    int k_max = 0;
    std::vector<FreeSlice> slices;
    std::vector<fit::PowerFit> fit_L1, fit_Linf;  // per k, plain power law
};

/// Norms of nabla_x^k rho_free over t-samples plus fitted exponents.
/// Expected rates for smooth localized data: L1 ~ t^{-k}, Linf ~ t^{-d-k}.
template <std::size_t D>
DecayReport free_decay_report(const InitialDatum<D>& f0, int k_max,
                              const std::vector<double>& t_samples) {
    if (k_max < 0) throw std::invalid_argument("free_decay_report: k_max >= 0 required");
    DecayReport rep;
    rep.k_max = k_max;
    for (double t : t_samples) {
        if (t <= 0) throw std::invalid_argument("free_decay_report: t > 0 required");
        FreeSlice s;
        s.t = t;
        s.L1.assign(k_max + 1, 0.0);
        s.Linf.assign(k_max + 1, 0.0);
        // cache per-axis norms for every derivative order used
        std::vector<std::array<std::pair<double, double>, D>> axis(k_max + 1);
        for (int m = 0; m <= k_max; ++m)
            for (std::size_t i = 0; i < D; ++i)
                axis[m][i] = detail::axis_norms(
                    detail::AxisConvolution{f0.ax[i].get(), f0.av[i].get(), m, 0, t});
        for (int k = 0; k <= k_max; ++k)
            for (const auto& kx : multi_indices<D>(k)) {
                double l1 = std::abs(f0.eps), li = std::abs(f0.eps);
                for (std::size_t i = 0; i < D; ++i) {
                    l1 *= axis[kx[i]][i].first;
                    li *= axis[kx[i]][i].second;
                }
                s.L1[k] = std::max(s.L1[k], l1);
                s.Linf[k] = std::max(s.Linf[k], li);
            }
        rep.slices.push_back(std::move(s));
    }
    for (int k = 0; k <= k_max; ++k) {
        std::vector<double> tv, y1, yi;
        for (const auto& s : rep.slices) {
            tv.push_back(s.t);
            y1.push_back(s.L1[k]);
            yi.push_back(s.Linf[k]);
        }
        rep.fit_L1.push_back(fit::fit_power_law(tv, y1));
        rep.fit_Linf.push_back(fit::fit_power_law(tv, yi));
    }
    return rep;
}

}  // namespace svp::transport
