#pragma once

// Closed forms for the mirror (plus) and synchronous (minus) couplings.
//
// Under the candidate control the reduced state is a Brownian motion with drift
// -mu and volatility |sigma_pm|. Its Laplace transform at the hitting time of 0
// is exp(-k z0); its survival function is
//
//   h(z, s) = N((z - mu s)/(|sigma| sqrt s)) - exp(2 mu z/sigma^2) N((-z - mu s)/(|sigma| sqrt s)).

#include "gbmc/error.hpp"
#include "gbmc/normal.hpp"
#include "gbmc/params.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace gbmc {

// ---------------------------------------------------------------------------
// Discounted problem
// ---------------------------------------------------------------------------

struct DiscountedValue {
    Sign sign = Sign::plus;
    double q = 0.0;
    double k_plus = 0.0;
    double k_minus = 0.0;  ///< NaN in the bad case
    double value = 0.0;    ///< E exp(-q tau) under the candidate coupling
    bool bad_case = false;
};

/// Positive root of sigma^2 k^2 / 2 + mu k - q = 0, or q/mu when sigma = 0.
template <class Real = double>
inline Real laplace_exponent(Real mu, Real sigma, Real q) {
    if (sigma == Real(0)) {
        if (mu <= Real(0)) return std::numeric_limits<Real>::quiet_NaN();
        return q / mu;
    }
    const Real s2 = sigma * sigma;
    const Real m = mu / s2;
    // -m + sqrt(m^2 + 2q/s2), written to avoid cancellation when m > 0.
    const Real root = std::sqrt(m * m + Real(2) * q / s2);
    return m > Real(0) ? (Real(2) * q / s2) / (m + root) : root - m;
}

inline DiscountedValue psi(const DerivedConstants& d, double q, Sign sign) {
    require(q > 0.0 && std::isfinite(q), "non_positive_rate", "discount rate q must be positive");
    DiscountedValue out;
    out.sign = sign;
    out.q = q;
    out.k_plus = laplace_exponent(d.mu, d.sigma_plus, q);
    out.k_minus = laplace_exponent(d.mu, d.sigma_minus, q);
    if (is_bad_case(d, sign)) {
        out.bad_case = true;
        out.value = d.coupled_at_start() ? 1.0 : 0.0;
        return out;
    }
    const double k = sign == Sign::plus ? out.k_plus : out.k_minus;
    out.value = std::exp(-k * d.z0);
    return out;
}

// ---------------------------------------------------------------------------
// Finite-horizon survival function and its derivatives
// ---------------------------------------------------------------------------

/// Survival function h(z, s) of the candidate coupling in the reduced coordinate,
/// with its partial derivatives. Requires sigma != 0; see phi() for the sigma = 0 branch.
class TailFunction {
public:
    TailFunction(double mu, double sigma) : mu_(mu), sigma_(std::abs(sigma)) {
        require(sigma_ > 0.0, "sigma_pm_zero", "tail function needs a non-zero combined volatility");
    }
    TailFunction(const DerivedConstants& d, Sign sign) : TailFunction(d.mu, d.sigma(sign)) {}

    [[nodiscard]] double mu() const { return mu_; }
    [[nodiscard]] double sigma() const { return sigma_; }

    [[nodiscard]] double value(double z, double s) const {
        if (z <= 0.0) return 0.0;
        const Args g = args(z, s);
        if (g.a < -20.0) return std::exp(log_value(z, s));
        const double complement = normal_cdf(-g.a) + exp_times_cdf(g.e, g.b);
        double v;
        if (complement < 1e-3)
            v = 1.0 - complement;
        else if (g.b > 0.0)  // both CDFs near 1: limit plus a decaying excess
            v = -std::expm1(g.e) + (std::exp(g.e) * normal_cdf(-g.b) - normal_cdf(-g.a));
        else
            v = normal_cdf(g.a) - exp_times_cdf(g.e, g.b);
        return std::clamp(v, 0.0, 1.0);
    }

    /// log h(z, s), usable deep in the tail where h underflows.
    [[nodiscard]] double log_value(double z, double s) const {
        if (z <= 0.0) return -std::numeric_limits<double>::infinity();
        const Args g = args(z, s);
        const double la = log_normal_cdf(g.a);
        const double ratio = std::exp(g.e + log_normal_cdf(g.b) - la);
        return la + std::log1p(-std::min(ratio, 1.0));
    }

    [[nodiscard]] double dz(double z, double s) const {
        const Args g = args(z, s);
        const double vs = sigma_ * std::sqrt(s);
        return 2.0 / vs * normal_pdf(g.a) - 2.0 * mu_ / (sigma_ * sigma_) * exp_times_cdf(g.e, g.b);
    }

    [[nodiscard]] double dzz(double z, double s) const {
        const Args g = args(z, s);
        const double vs = sigma_ * std::sqrt(s);
        const double s4 = sigma_ * sigma_ * sigma_ * sigma_;
        return (4.0 * s * mu_ - 2.0 * z) / (vs * vs * vs) * normal_pdf(g.a) -
               4.0 * mu_ * mu_ / s4 * exp_times_cdf(g.e, g.b);
    }

    [[nodiscard]] double ds(double z, double s) const {
        const Args g = args(z, s);
        return -z / (sigma_ * s * std::sqrt(s)) * normal_pdf(g.a);
    }

    /// lim_{s -> inf} h(z, s).
    [[nodiscard]] double limit(double z) const {
        if (z <= 0.0 || mu_ >= 0.0) return 0.0;
        return -std::expm1(2.0 * mu_ * z / (sigma_ * sigma_));
    }

private:
    struct Args {
        double a;  // (z - mu s)/(sigma sqrt s)
        double b;  // (-z - mu s)/(sigma sqrt s)
        double e;  // 2 mu z / sigma^2
    };

    [[nodiscard]] Args args(double z, double s) const {
        require(s > 0.0, "non_positive_time", "time argument must be positive");
        const double vs = sigma_ * std::sqrt(s);
        return {(z - mu_ * s) / vs, (-z - mu_ * s) / vs, 2.0 * mu_ * z / (sigma_ * sigma_)};
    }

    double mu_;
    double sigma_;
};

/// Survival probability P(tau > t) of the candidate coupling started at log-distance z.
inline double phi_at(const DerivedConstants& d, double z, double t, Sign sign) {
    require(t > 0.0 && std::isfinite(t), "non_positive_time", "phi needs t > 0");
    if (z <= 0.0) return 0.0;
    if (d.sigma(sign) == 0.0) {
        // Deterministic reduced state: Z_t = z - mu t.
        if (d.mu <= 0.0) return 1.0;
        return t * d.mu < z ? 1.0 : 0.0;
    }
    return TailFunction(d, sign).value(z, t);
}

inline double phi(const DerivedConstants& d, double t, Sign sign) { return phi_at(d, d.z0, t, sign); }

/// x y Phi_xy = -h_zz. Negative values mark where the candidate coupling can be beaten.
inline double phi_xy(const DerivedConstants& d, double t, Sign sign, double z) {
    if (d.sigma(sign) == 0.0) throw InputError("sigma_pm_zero", "phi_xy is undefined for sigma_pm = 0");
    require(t > 0.0 && z > 0.0, "outside_interior", "phi_xy needs z > 0 and t > 0");
    return -TailFunction(d, sign).dzz(z, t);
}

// ---------------------------------------------------------------------------
// PDE residuals
// ---------------------------------------------------------------------------

/// (L Psi)(x, y) for the discounted generator, with the closed-form derivatives of
/// Psi = (y/x)^k. Vanishes up to round-off.
inline double pde_residual_L(const DerivedConstants& d, double q, Sign sign, double x, double y) {
    require(x > y && y > 0.0, "outside_interior", "(x, y) must satisfy x > y > 0");
    if (is_bad_case(d, sign)) throw InputError("bad_case", "Psi is an indicator in the bad case");
    require(q > 0.0 && std::isfinite(q), "non_positive_rate", "discount rate q must be positive");
    // large k near sigma = 0 cancels badly in double
    using R = long double;
    const ProblemSpec& p = d.reduced;
    const R k = laplace_exponent<R>(d.mu, d.sigma(sign), q);
    const R X = x, Y = y;
    const R v = std::pow(Y / X, k);
    const R vx = -k / X * v;
    const R vy = k / Y * v;
    const R vxx = k * (k + 1) / (X * X) * v;
    const R vyy = k * (k - 1) / (Y * Y) * v;
    const R vxy = -k * k / (X * Y) * v;
    const R s1 = p.sigma1, s2 = p.sigma2;
    const R cross = sign == Sign::plus ? -1 : 1;
    const R r = R(p.a1) * X * vx + R(p.a2) * Y * vy + s1 * s1 * X * X * vxx / 2 + s2 * s2 * Y * Y * vyy / 2 +
                cross * s1 * s2 * X * Y * vxy - R(q) * v;
    return static_cast<double>(r);
}

/// (A Phi)(x, y, t) for the finite-horizon generator, evaluated through the reduced
/// coordinate: x Phi_x = h_z, y Phi_y = -h_z, x^2 Phi_xx = h_zz - h_z,
/// y^2 Phi_yy = h_zz + h_z, x y Phi_xy = -h_zz, Phi_t = h_s.
inline double pde_residual_A(const DerivedConstants& d, Sign sign, double z, double t) {
    require(z > 0.0 && t > 0.0, "outside_interior", "residual needs z > 0 and t > 0");
    const TailFunction h(d, sign);
    const double hz = h.dz(z, t);
    const double hzz = h.dzz(z, t);
    const double hs = h.ds(z, t);
    const ProblemSpec& p = d.reduced;
    const double cross = sign == Sign::plus ? -1.0 : 1.0;
    return p.a1 * hz - p.a2 * hz + 0.5 * p.sigma1 * p.sigma1 * (hzz - hz) +
           0.5 * p.sigma2 * p.sigma2 * (hzz + hz) + cross * p.sigma1 * p.sigma2 * (-hzz) - hs;
}

// ---------------------------------------------------------------------------
// Exponential efficiency
// ---------------------------------------------------------------------------

struct TailRate {
    double rate_mirror = 0.0;  ///< lim (1/t) log P(tau(-B) > t)
    double rate_sync = 0.0;    ///< lim (1/t) log P(tau(B) > t); -inf for a deterministic finite tau
    bool mirror_efficient = true;  ///< in (T+)
    bool sync_efficient = true;    ///< in (T-)
    /// Conjectured optimal rate for (T+): the synchronous rate when mu > 0.
    double conjectured_plus = 0.0;
    /// Conjectured optimal rate for (T-): the mirror rate when mu > 0.
    double conjectured_minus = 0.0;
    std::string reason;
};

inline double tail_rate(const DerivedConstants& d, Sign sign) {
    const double s = d.sigma(sign);
    if (d.mu <= 0.0) return 0.0;  // P(tau = inf) > 0, or subexponential decay at mu = 0
    if (s == 0.0) return -std::numeric_limits<double>::infinity();
    return -d.mu * d.mu / (2.0 * s * s);
}

inline TailRate tail_rates(const DerivedConstants& d) {
    if (d.coupled_at_start()) throw InputError("z0_zero", "tail rates need distinct starting points");
    TailRate r;
    r.rate_mirror = tail_rate(d, Sign::plus);
    r.rate_sync = tail_rate(d, Sign::minus);
    if (d.mu > 0.0) {
        r.mirror_efficient = false;
        r.sync_efficient = false;
        r.conjectured_plus = r.rate_sync;
        r.conjectured_minus = r.rate_mirror;
        r.reason = "mu_pos_not_efficient";
    } else {
        r.conjectured_plus = r.rate_mirror;
        r.conjectured_minus = r.rate_sync;
        r.reason = "mu_le_zero_efficient";
    }
    return r;
}

struct NormalBounds {
    double lower;  ///< alpha/(1 + alpha^2) n(alpha)
    double value;  ///< N(-alpha)
    double upper;  ///< n(alpha)/alpha
};

inline NormalBounds normal_bounds_check(double alpha) {
    require(alpha > 0.0, "non_positive_alpha", "alpha must be positive");
    const double n = normal_pdf(alpha);
    return {alpha / (1.0 + alpha * alpha) * n, normal_cdf(-alpha), n / alpha};
}

// ---------------------------------------------------------------------------
// Batch evaluation
// ---------------------------------------------------------------------------

struct AnalyticRow {
    double z, t;
    double phi_plus, phi_minus;
    double phi_xy_plus, phi_xy_minus;  ///< NaN where undefined (sigma_pm = 0 or z = 0)
    double residual_plus, residual_minus;
};

inline std::vector<AnalyticRow> analytic_table(const DerivedConstants& d, std::span<const double> z,
                                               std::span<const double> t) {
    require(z.size() == t.size(), "length_mismatch", "z and t arrays must have equal length");
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<AnalyticRow> rows;
    rows.reserve(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        AnalyticRow r{z[i], t[i], phi_at(d, z[i], t[i], Sign::plus), phi_at(d, z[i], t[i], Sign::minus),
                      nan, nan, nan, nan};
        if (z[i] > 0.0) {
            r.phi_xy_plus = phi_xy(d, t[i], Sign::plus, z[i]);
            r.residual_plus = pde_residual_A(d, Sign::plus, z[i], t[i]);
            if (d.sigma_minus != 0.0) {
                r.phi_xy_minus = phi_xy(d, t[i], Sign::minus, z[i]);
                r.residual_minus = pde_residual_A(d, Sign::minus, z[i], t[i]);
            }
        }
        rows.push_back(r);
    }
    return rows;
}

}  // namespace gbmc
