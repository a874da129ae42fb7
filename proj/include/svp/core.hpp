#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace svp {

inline constexpr double pi = std::numbers::pi;

template <std::size_t D>
using Vec = std::array<double, D>;

template <std::size_t D>
double dot(const Vec<D>& a, const Vec<D>& b) {
    double s = 0;
    for (std::size_t i = 0; i < D; ++i) s += a[i] * b[i];
    return s;
}

template <std::size_t D>
double norm2(const Vec<D>& a) {
    return std::sqrt(dot(a, a));
}

template <std::size_t D>
Vec<D> axpy(double a, const Vec<D>& x, const Vec<D>& y) {
    Vec<D> r{};
    for (std::size_t i = 0; i < D; ++i) r[i] = a * x[i] + y[i];
    return r;
}

// <t> = sqrt(1 + t^2), the Japanese bracket used by every weighted norm here.
inline double bracket(double t) { return std::sqrt(1.0 + t * t); }

/// Uniform 1-D axis: n points x_i = origin + i*step.
struct Axis {
    double origin = 0;
    double step = 1;
    int n = 0;
    double operator[](int i) const { return origin + step * i; }
    double back() const { return origin + step * (n - 1); }
};

/// Centered uniform axis covering [-half, half] with n points (n >= 2).
inline Axis centered_axis(double half, int n) {
    if (n < 2) throw std::invalid_argument("centered_axis: n must be >= 2");
    return Axis{-half, 2 * half / (n - 1), n};
}

/// Row-major multi-index walker over a D-dim tensor grid with n points per axis.
template <std::size_t D>
struct TensorIndex {
    std::array<int, D> n{};
    std::size_t size() const {
        std::size_t s = 1;
        for (std::size_t i = 0; i < D; ++i) s *= static_cast<std::size_t>(n[i]);
        return s;
    }
    std::array<int, D> decode(std::size_t flat) const {
        std::array<int, D> idx{};
        for (std::size_t i = D; i-- > 0;) {
            idx[i] = static_cast<int>(flat % n[i]);
            flat /= n[i];
        }
        return idx;
    }
};

/// Smooth transition h(s) = e^{-1/s} glued ramp: 0 for s<=0, 1 for s>=1, C^inf.
inline double smooth_ramp(double s) {
    if (s <= 0) return 0;
    if (s >= 1) return 1;
    const double a = std::exp(-1.0 / s);
    const double b = std::exp(-1.0 / (1.0 - s));
    return a / (a + b);
}

/// Multi-indices of total order k in D variables (lexicographic).
template <std::size_t D>
std::vector<std::array<int, D>> multi_indices(int k) {
    std::vector<std::array<int, D>> out;
    std::array<int, D> idx{};
    // recursive enumeration without recursion: odometer over first D-1 slots
    auto emit = [&](auto&& self, std::size_t pos, int rem) -> void {
        if (pos == D - 1) {
            idx[pos] = rem;
            out.push_back(idx);
            return;
        }
        for (int i = rem; i >= 0; --i) {
            idx[pos] = i;
            self(self, pos + 1, rem - i);
        }
    };
    emit(emit, 0, k);
    return out;
}

inline std::string format_double(double v, int precision = 12) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    return buf;
}

}  // namespace svp
