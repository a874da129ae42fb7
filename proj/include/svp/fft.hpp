#pragma once

#include <fftw3.h>

#include <complex>
#include <stdexcept>
#include <vector>

#include "svp/core.hpp"
#include "svp/quadrature.hpp"

namespace svp {

using cplx = std::complex<double>;

/// In-place complex DFT, sign = FFTW_FORWARD or FFTW_BACKWARD. Unnormalized.
/// Plans use FFTW_ESTIMATE so repeated runs are bit-reproducible.
inline void fft_1d(std::vector<cplx>& data, int sign) {
    auto* p = reinterpret_cast<fftw_complex*>(data.data());
    fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(data.size()), p, p, sign, FFTW_ESTIMATE);
    if (!plan) throw std::runtime_error("fft_1d: planning failed");
    fftw_execute(plan);
    fftw_destroy_plan(plan);
}

/// Periodic box [-L/2, L/2)^D sampled at n points per axis (n even).
/// Physical nodes x_j = (j - n/2) h, h = L/n; frequencies xi_m = 2 pi m / L,
/// m = mode_of(k) in [-n/2, n/2). The pair forward/backward matches the
/// continuum conventions hat f(xi) = int f e^{-i x xi} dx and
/// f(x) = L^{-D} sum_m hat f_m e^{i x xi_m}.
template <std::size_t D>
struct SpectralBox {
    double L = 0;
    int n = 0;

    double h() const { return L / n; }
    std::size_t size() const {
        std::size_t s = 1;
        for (std::size_t i = 0; i < D; ++i) s *= static_cast<std::size_t>(n);
        return s;
    }
    int mode_of(int k) const { return k < n - n / 2 ? k : k - n; }

    Vec<D> x(const std::array<int, D>& j) const {
        Vec<D> v{};
        for (std::size_t i = 0; i < D; ++i) v[i] = (j[i] - n / 2) * h();
        return v;
    }
    Vec<D> xi(const std::array<int, D>& k) const {
        Vec<D> v{};
        for (std::size_t i = 0; i < D; ++i) v[i] = 2 * pi * mode_of(k[i]) / L;
        return v;
    }
    TensorIndex<D> indexer() const {
        TensorIndex<D> t;
        t.n.fill(n);
        return t;
    }

    /// Physical samples on the centered grid -> hat f(xi_m), h^D-weighted.
    /// The centering phase e^{i pi m} per axis reduces to a parity flip.
    void forward(std::vector<cplx>& data) const {
        dft(data, FFTW_FORWARD);
        double s = 1.0;
        for (std::size_t i = 0; i < D; ++i) s *= h();
        for (auto& c : data) c *= s;
        sign_spectral(data);
    }

    /// hat f(xi_m) -> physical samples: f(x_j) = L^{-D} sum_m hat f_m e^{i xi_m x_j}.
    void backward(std::vector<cplx>& data) const {
        sign_spectral(data);
        dft(data, FFTW_BACKWARD);
        double s = 1.0;
        for (std::size_t i = 0; i < D; ++i) s /= L;
        for (auto& c : data) c *= s;
    }

  private:
    void dft(std::vector<cplx>& data, int sign) const {
        if (data.size() != size()) throw std::invalid_argument("SpectralBox: size mismatch");
        int dims[D];
        for (std::size_t i = 0; i < D; ++i) dims[i] = n;
        auto* p = reinterpret_cast<fftw_complex*>(data.data());
        fftw_plan plan = fftw_plan_dft(D, dims, p, p, sign, FFTW_ESTIMATE);
        if (!plan) throw std::runtime_error("SpectralBox: planning failed");
        fftw_execute(plan);
        fftw_destroy_plan(plan);
    }
    void sign_spectral(std::vector<cplx>& data) const {
        auto t = indexer();
        for (std::size_t f = 0; f < data.size(); ++f) {
            auto k = t.decode(f);
            int msum = 0;
            for (std::size_t i = 0; i < D; ++i) msum += mode_of(k[i]);
            if (msum & 1) data[f] = -data[f];
        }
    }
};

/// 3-D radial Fourier transform of a radial profile: hat f(r) =
/// (4 pi / r) int_0^inf sin(r R) f(R) R dR, with the r -> 0 limit handled.
inline double radial_fourier_3d(const Rule1D& rule, const std::vector<double>& fR, double r) {
    double acc = 0;
    if (r < 1e-12) {
        for (std::size_t i = 0; i < rule.size(); ++i) {
            const double R = rule.nodes[i];
            acc += rule.weights[i] * fR[i] * R * R;
        }
        return 4 * pi * acc;
    }
    for (std::size_t i = 0; i < rule.size(); ++i) {
        const double R = rule.nodes[i];
        acc += rule.weights[i] * std::sin(r * R) * fR[i] * R;
    }
    return 4 * pi * acc / r;
}

/// Inverse 3-D radial transform: f(R) = (2 pi^2 R)^{-1} int_0^inf sin(r R) hat f(r) r dr.
inline double radial_fourier_3d_inverse(const Rule1D& rule, const std::vector<double>& fr,
                                        double R) {
    double acc = 0;
    if (R < 1e-12) {
        for (std::size_t i = 0; i < rule.size(); ++i) {
            const double r = rule.nodes[i];
            acc += rule.weights[i] * fr[i] * r * r;
        }
        return acc / (2 * pi * pi);
    }
    for (std::size_t i = 0; i < rule.size(); ++i) {
        const double r = rule.nodes[i];
        acc += rule.weights[i] * std::sin(r * R) * fr[i] * r;
    }
    return acc / (2 * pi * pi * R);
}

}  // namespace svp
