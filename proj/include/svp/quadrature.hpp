#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "svp/core.hpp"

namespace svp {

struct Rule1D {
    std::vector<double> nodes;
    std::vector<double> weights;
    std::size_t size() const { return nodes.size(); }
};

/// Composite trapezoid on [a,b] with n points.
inline Rule1D trapezoid_rule(double a, double b, int n) {
    if (n < 2) throw std::invalid_argument("trapezoid_rule: n >= 2 required");
    Rule1D r;
    const double h = (b - a) / (n - 1);
    r.nodes.resize(n);
    r.weights.assign(n, h);
    for (int i = 0; i < n; ++i) r.nodes[i] = a + h * i;
    r.weights.front() = r.weights.back() = h / 2;
    return r;
}

/// Gauss-Legendre nodes/weights on [-1,1], Newton on the Legendre recurrence.
inline Rule1D gauss_legendre(int n) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: n >= 1 required");
    Rule1D r;
    r.nodes.resize(n);
    r.weights.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(pi * (i + 0.75) / (n + 0.5));
        double dp = 0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        r.nodes[i] = -x;
        r.nodes[n - 1 - i] = x;
        const double w = 2.0 / ((1 - x * x) * dp * dp);
        r.weights[i] = w;
        r.weights[n - 1 - i] = w;
    }
    return r;
}

/// Gauss-Legendre mapped to [a,b].
inline Rule1D gauss_legendre(int n, double a, double b) {
    Rule1D base = gauss_legendre(n);
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (std::size_t i = 0; i < base.size(); ++i) {
        base.nodes[i] = mid + half * base.nodes[i];
        base.weights[i] *= half;
    }
    return base;
}

/// Gauss-Hermite for int f(x) e^{-x^2} dx; Newton on the Hermite recurrence.
inline Rule1D gauss_hermite(int n) {
    if (n < 1) throw std::invalid_argument("gauss_hermite: n >= 1 required");
    Rule1D r;
    r.nodes.resize(n);
    r.weights.resize(n);
    double x = 0;
    for (int i = 0; i < (n + 1) / 2; ++i) {
        // initial guesses (Numerical Recipes ordering: largest root first)
        if (i == 0)
            x = std::sqrt(2.0 * n + 1) - 1.85575 * std::pow(2.0 * n + 1, -1.0 / 6);
        else if (i == 1)
            x -= 1.14 * std::pow(static_cast<double>(n), 0.426) / x;
        else if (i == 2)
            x = 1.86 * x - 0.86 * r.nodes[n - 1];
        else if (i == 3)
            x = 1.91 * x - 0.91 * r.nodes[n - 2];
        else
            x = 2 * x - r.nodes[n - i + 1];
        double dp = 0;
        for (int it = 0; it < 200; ++it) {
            double p0 = std::pow(pi, -0.25), p1 = 0;
            for (int k = 0; k < n; ++k) {
                const double p2 = x * std::sqrt(2.0 / (k + 1)) * p0 -
                                  std::sqrt(static_cast<double>(k) / (k + 1)) * p1;
                p1 = p0;
                p0 = p2;
            }
            dp = std::sqrt(2.0 * n) * p1;
            const double dx = p0 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-14) break;
        }
        r.nodes[n - 1 - i] = x;
        r.nodes[i] = -x;
        const double w = 2.0 / (dp * dp);
        r.weights[n - 1 - i] = w;
        r.weights[i] = w;
    }
    return r;
}

/// Open rule for int phi(w) dw when phi is approximately a*exp(-w^2/(2 sigma^2)):
/// Gauss-Hermite transplanted so the Gaussian factor is absorbed into the weights.
inline Rule1D gauss_hermite_for_gaussian(int n, double sigma, double center = 0) {
    Rule1D gh = gauss_hermite(n);
    Rule1D r;
    r.nodes.resize(gh.size());
    r.weights.resize(gh.size());
    const double s = sigma * std::sqrt(2.0);
    for (std::size_t i = 0; i < gh.size(); ++i) {
        r.nodes[i] = center + s * gh.nodes[i];
        r.weights[i] = s * gh.weights[i] * std::exp(gh.nodes[i] * gh.nodes[i]);
    }
    return r;
}

/// Graded composite Gauss-Legendre panels on [a,b]: panel boundaries from
/// `breaks` clipped to [a,b], `per_panel` nodes per panel.
inline Rule1D graded_gl(double a, double b, const std::vector<double>& breaks, int per_panel) {
    Rule1D out;
    if (b <= a) return out;
    std::vector<double> edges{a};
    for (double c : breaks)
        if (c > a && c < b) edges.push_back(c);
    edges.push_back(b);
    for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
        Rule1D panel = gauss_legendre(per_panel, edges[p], edges[p + 1]);
        out.nodes.insert(out.nodes.end(), panel.nodes.begin(), panel.nodes.end());
        out.weights.insert(out.weights.end(), panel.weights.begin(), panel.weights.end());
    }
    return out;
}

}  // namespace svp
