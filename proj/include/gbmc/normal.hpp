#pragma once

#include <cmath>
#include <limits>
#include <numbers>

namespace gbmc {

inline constexpr double kInvSqrt2Pi = 0.3989422804014326779399461;
inline constexpr double kHalfLog2Pi = 0.9189385332046727417803297;

inline double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

/// Standard normal CDF via erfc, accurate in relative terms on the lower tail
/// until erfc underflows (x < -37.5).
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// log N(x). Uses the asymptotic Mills-ratio series below x = -30, where the
/// truncated series is accurate far beyond double precision.
inline double log_normal_cdf(double x) {
    if (x > 0.0) return std::log1p(-normal_cdf(-x));
    if (x > -30.0) return std::log(normal_cdf(x));
    const double r = 1.0 / (x * x);
    // 1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8 - 945/x^10 + 10395/x^12
    const double series =
        1.0 + r * (-1.0 + r * (3.0 + r * (-15.0 + r * (105.0 + r * (-945.0 + r * 10395.0)))));
    return -0.5 * x * x - std::log(-x) - kHalfLog2Pi + std::log(series);
}

/// exp(a) * N(b), evaluated in log space when either factor leaves double range.
inline double exp_times_cdf(double a, double b) {
    if (a < 700.0 && b > -37.0) return std::exp(a) * normal_cdf(b);
    const double log_value = a + log_normal_cdf(b);
    return std::exp(log_value);
}

}  // namespace gbmc
