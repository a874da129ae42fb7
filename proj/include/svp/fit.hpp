#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace svp::fit {

struct PowerFit {
    double exponent = 0;   // p in y ~ C t^p
    double log_amp = 0;    // log C
    double rms = 0;        // rms residual in log space
};

/// Least squares on (log t, log y). Nonpositive y samples are rejected.
inline PowerFit fit_power_law(const std::vector<double>& t, const std::vector<double>& y) {
    if (t.size() != y.size() || t.size() < 2)
        throw std::invalid_argument("fit_power_law: need >= 2 matching samples");
    const std::size_t n = t.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(t[i] > 0) || !(y[i] > 0))
            throw std::invalid_argument("fit_power_law: samples must be positive");
        const double X = std::log(t[i]), Y = std::log(y[i]);
        sx += X;
        sy += Y;
        sxx += X * X;
        sxy += X * Y;
    }
    PowerFit f;
    const double det = n * sxx - sx * sx;
    f.exponent = (n * sxy - sx * sy) / det;
    f.log_amp = (sy - f.exponent * sx) / n;
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = std::log(y[i]) - f.log_amp - f.exponent * std::log(t[i]);
        ss += r * r;
    }
    f.rms = std::sqrt(ss / n);
    return f;
}

/// Same fit after dividing out a log(2+t) factor: y ~ C t^p log(2+t).
inline PowerFit fit_power_law_logcorrected(const std::vector<double>& t,
                                           const std::vector<double>& y) {
    std::vector<double> z(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) z[i] = y[i] / std::log(2 + t[i]);
    return fit_power_law(t, z);
}

/// Fit window used by the decay reports: [max(lo, T/10), hi_frac * T].
inline std::pair<double, double> decay_window(double T, double lo = 2.0, double hi_frac = 0.9) {
    return {std::max(lo, T / 10), hi_frac * T};
}

}  // namespace svp::fit
