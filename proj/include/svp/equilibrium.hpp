#pragma once

#include <algorithm>
#include <complex>
#include <map>
#include <stdexcept>
#include <vector>

#include "svp/core.hpp"
#include "svp/quadrature.hpp"

namespace svp::equilibria {

enum class Family { maxwellian, double_bump };

/// Probabilists' Hermite polynomial He_k(z).
inline double hermite_he(int k, double z) {
    double p0 = 1, p1 = z;
    if (k == 0) return p0;
    for (int i = 1; i < k; ++i) {
        const double p2 = z * p1 - i * p0;
        p0 = p1;
        p1 = p2;
    }
    return p1;
}

/// k-th derivative of the unit-mass 1-D Gaussian with scale sigma.
inline double gaussian_derivative(double sigma, int k, double x) {
    const double z = x / sigma;
    const double g = std::exp(-0.5 * z * z) / (sigma * std::sqrt(2 * pi));
    double sgn = (k & 1) ? -1.0 : 1.0;
    return sgn * hermite_he(k, z) * g / std::pow(sigma, k);
}

/// Spatially homogeneous velocity profile: unit-mass Maxwellian with scale
/// sigma, or an equal-weight mixture of two Maxwellians centered at +-u along
/// axis 0. Derivative evaluators cover all partials of order <= max_deriv;
/// decay constants C_{m,M} bound max_{|a|=m} |d^a mu(v)| <v>^M.
template <std::size_t D>
struct Equilibrium {
    Family family = Family::maxwellian;
    double sigma = 1;
    double u = 0;
    int max_deriv = 5;
    std::map<std::pair<int, int>, double> decay_constants;

    // per-axis factor value/derivative (axis 0 carries the mixture)
    double axis_factor(int axis, int k, double x) const {
        if (family == Family::double_bump && axis == 0)
            return 0.5 * (gaussian_derivative(sigma, k, x - u) +
                          gaussian_derivative(sigma, k, x + u));
        return gaussian_derivative(sigma, k, x);
    }

    double density(const Vec<D>& v) const {
        double p = 1;
        for (std::size_t i = 0; i < D; ++i) p *= axis_factor(i, 0, v[i]);
        return p;
    }

    double derivative(const std::array<int, D>& alpha, const Vec<D>& v) const {
        int order = 0;
        for (std::size_t i = 0; i < D; ++i) order += alpha[i];
        if (order > max_deriv)
            throw std::invalid_argument("Equilibrium::derivative: order exceeds max_deriv");
        double p = 1;
        for (std::size_t i = 0; i < D; ++i) p *= axis_factor(i, alpha[i], v[i]);
        return p;
    }

    /// max over |alpha| = m of |d^alpha mu(v)|.
    double derivative_magnitude(int m, const Vec<D>& v) const {
        double best = 0;
        for (const auto& a : multi_indices<D>(m)) best = std::max(best, std::abs(derivative(a, v)));
        return best;
    }

    /// hat mu(eta) = int mu(v) e^{-i v eta} dv; real and even for both families.
    double fourier(const Vec<D>& eta) const {
        const double q = dot(eta, eta);
        double val = std::exp(-0.5 * sigma * sigma * q);
        if (family == Family::double_bump) val *= std::cos(u * eta[0]);
        return val;
    }

    /// Fourier transform of grad_v mu: i eta hat mu(eta).
    std::array<std::complex<double>, D> fourier_gradient(const Vec<D>& eta) const {
        std::array<std::complex<double>, D> g;
        const double mh = fourier(eta);
        for (std::size_t i = 0; i < D; ++i) g[i] = std::complex<double>(0, eta[i]) * mh;
        return g;
    }

    /// Half-width used by the velocity quadrature (Gaussian tail < 1e-12).
    double support_halfwidth() const { return 8 * sigma + u; }

    /// Tensor trapezoid rule per axis on [-halfwidth, halfwidth].
    Rule1D velocity_rule(int n_per_axis = 64) const {
        return trapezoid_rule(-support_halfwidth(), support_halfwidth(), n_per_axis);
    }

    double decay_constant(int m, int M) const {
        auto it = decay_constants.find({m, M});
        if (it == decay_constants.end())
            throw std::invalid_argument("Equilibrium::decay_constant: pair (m, M) not stored");
        return it->second;
    }
};

struct DecayCheck {
    bool holds = false;
    double worst = 0;     // max over samples of |grad^m mu| <v>^M
    double constant = 0;  // stored C_{m,M}
};

/// Check max_{|a|=m} |d^a mu(v)| <v>^M <= C_{m,M} over the given samples.
template <std::size_t D>
DecayCheck verify_decay_bound(const Equilibrium<D>& eq, int m, int M,
                              const std::vector<Vec<D>>& samples) {
    DecayCheck out;
    out.constant = eq.decay_constant(m, M);
    for (const auto& v : samples) {
        const double w = eq.derivative_magnitude(m, v) * std::pow(bracket(norm2<D>(v)), M);
        out.worst = std::max(out.worst, w);
    }
    out.holds = out.worst <= out.constant;
    return out;
}

namespace detail {

// sup over v of |d^alpha mu| <v>^M: coarse tensor scan, dense axis-plane
// scans (product profiles peak with most coordinates near zero), then local
// pattern refinement. A stored margin keeps the constant safe.
template <std::size_t D>
double weighted_sup(const Equilibrium<D>& eq, const std::array<int, D>& alpha, int M) {
    const double half = 5 * eq.sigma + eq.u + 0.5 * M;
    auto value = [&](const Vec<D>& v) {
        return std::abs(eq.derivative(alpha, v)) * std::pow(bracket(norm2<D>(v)), M);
    };
    double best = 0;
    Vec<D> argbest{};
    auto consider = [&](const Vec<D>& v) {
        const double w = value(v);
        if (w > best) {
            best = w;
            argbest = v;
        }
    };
    const int nc = 13;
    const double hc = 2 * half / (nc - 1);
    TensorIndex<D> ti;
    ti.n.fill(nc);
    for (std::size_t f = 0; f < ti.size(); ++f) {
        auto idx = ti.decode(f);
        Vec<D> v{};
        for (std::size_t i = 0; i < D; ++i) v[i] = -half + hc * idx[i];
        consider(v);
    }
    const int nd = 41;
    const double hd = 2 * half / (nd - 1);
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = i; j < D; ++j)
            for (int a = 0; a < nd; ++a)
                for (int b = 0; b < nd; ++b) {
                    Vec<D> v{};
                    v[i] = -half + hd * a;
                    v[j] = -half + hd * b;
                    consider(v);
                    if (i == j) break;
                }
    double step = hc;
    for (int round = 0; round < 60; ++round) {
        bool improved = false;
        for (std::size_t axis = 0; axis < D; ++axis) {
            for (double sgn : {-1.0, 1.0}) {
                Vec<D> v = argbest;
                v[axis] += sgn * step;
                const double w = value(v);
                if (w > best) {
                    best = w;
                    argbest = v;
                    improved = true;
                }
            }
        }
        if (!improved) step /= 2;
        if (step < 1e-4) break;
    }
    return best;
}

// alpha up to the axis symmetry of the family (axis 0 distinguished only for
// the double bump); skipping equivalent multi-indices speeds up construction.
template <std::size_t D>
bool canonical_alpha(const Equilibrium<D>& eq, const std::array<int, D>& alpha) {
    const std::size_t start = eq.family == Family::double_bump ? 1 : 0;
    for (std::size_t i = start; i + 1 < D; ++i)
        if (alpha[i] < alpha[i + 1]) return false;
    return true;
}

}  // namespace detail

template <std::size_t D>
Equilibrium<D> make_equilibrium(Family family, double sigma, double u = 0, int max_deriv = 5,
                                std::vector<int> decay_weights = {}) {
    static_assert(D >= 1);
    if (sigma <= 0) throw std::invalid_argument("make_equilibrium: sigma must be positive");
    if (u < 0) throw std::invalid_argument("make_equilibrium: u must be nonnegative");
    if (family == Family::maxwellian) u = 0;
    Equilibrium<D> eq;
    eq.family = family;
    eq.sigma = sigma;
    eq.u = u;
    eq.max_deriv = max_deriv;
    if (decay_weights.empty()) decay_weights = {2, D + 1, D + 3};
    for (int m = 0; m <= max_deriv; ++m)
        for (int M : decay_weights) {
            double sup = 0;
            for (const auto& a : multi_indices<D>(m)) {
                if (!detail::canonical_alpha(eq, a)) continue;
                sup = std::max(sup, detail::weighted_sup(eq, a, M));
            }
            eq.decay_constants[{m, M}] = 1.10 * sup;
        }
    return eq;
}

}  // namespace svp::equilibria
