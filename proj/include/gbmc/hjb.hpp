#pragma once

// Finite-difference solver for the finite-horizon control problem in the reduced
// coordinate. With s the remaining time, the value F(z, s) = opt_c P(tau > s) solves
//
//   F_s = opt_{c in {-1, +1}} [ 1/2 v(c) F_zz - mu F_z ],   F(0, s) = 0,  F(z > 0, 0) = 1,
//
// where v(c) = sigma1^2 + sigma2^2 - 2 sigma1 sigma2 c and opt is min (plus) or max (minus).
// The drift is differenced centrally wherever that keeps the scheme monotone and
// upwind otherwise. The default time stepper is backward Euler with Howard policy
// iteration at each step; an explicit stepper is available under its stability bound.

#include "gbmc/analytic.hpp"
#include "gbmc/error.hpp"
#include "gbmc/params.hpp"
#include "gbmc/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace gbmc {

enum class BoundaryMode { analytic_candidate, one };
enum class Scheme { implicit, explicit_ };

inline const char* to_string(BoundaryMode m) { return m == BoundaryMode::one ? "one" : "analytic-mirror"; }
inline const char* to_string(Scheme s) { return s == Scheme::implicit ? "implicit" : "explicit"; }

struct GridSpec {
    double z_max = 0.0;  ///< 0 selects z0 + 6 |sigma_plus| sqrt(T) + |mu| T
    std::size_t n_z = 512;
    std::size_t n_t = 4096;
    BoundaryMode boundary_mode = BoundaryMode::analytic_candidate;
    Scheme scheme = Scheme::implicit;
};

inline double default_z_max(const DerivedConstants& d, double T) {
    return d.z0 + 6.0 * std::abs(d.sigma_plus) * std::sqrt(T) + std::abs(d.mu) * T;
}

/// F on nodes z_i = i dz (i < n_z) and remaining times s_j = j dt (j <= n_t).
/// Control at layer j is the one used on the step from s_{j-1} to s_j; layer 0 holds
/// the candidate control.
struct ValueSurface {
    Sign sign = Sign::plus;
    double dz = 0.0;
    double dt = 0.0;
    double horizon = 0.0;
    std::size_t n_z = 0;
    std::size_t n_t = 0;
    std::size_t z0_index = 0;   ///< node nearest z0
    bool z0_on_node = false;
    std::vector<double> values;         ///< layer-major, (n_t + 1) * n_z; empty for terminal-only solves
    std::vector<std::int8_t> controls;  ///< same layout as values
    std::vector<double> terminal;       ///< F(., horizon)
    std::vector<std::int8_t> terminal_controls;
    std::size_t policy_iterations = 0;  ///< total Howard sweeps

    [[nodiscard]] double z(std::size_t i) const { return static_cast<double>(i) * dz; }
    [[nodiscard]] double t(std::size_t j) const { return j == n_t ? horizon : static_cast<double>(j) * dt; }
    [[nodiscard]] double F(std::size_t i, std::size_t j) const { return values[j * n_z + i]; }
    [[nodiscard]] std::int8_t c(std::size_t i, std::size_t j) const { return controls[j * n_z + i]; }

    /// Linear interpolation of the terminal layer.
    [[nodiscard]] double terminal_at(double z) const {
        if (z <= 0.0) return terminal.front();
        const double u = z / dz;
        const auto i = static_cast<std::size_t>(u);
        if (i + 1 >= n_z) return terminal.back();
        const double w = u - static_cast<double>(i);
        return (1.0 - w) * terminal[i] + w * terminal[i + 1];
    }
    [[nodiscard]] double value_at_start(double z0) const {
        return z0_on_node ? terminal[z0_index] : terminal_at(z0);
    }
};

namespace detail {

struct Stencil {
    double lower, diag, upper;  ///< coefficients of F_{i-1}, F_i, F_{i+1} in the discrete generator
};

inline Stencil stencil(double v, double mu, double dz) {
    const double diff = 0.5 * v / (dz * dz);
    if (std::abs(mu) * dz <= v) {
        const double adv = mu / (2.0 * dz);
        return {diff + adv, -2.0 * diff, diff - adv};
    }
    if (mu > 0.0) return {diff + mu / dz, -2.0 * diff - mu / dz, diff};
    return {diff, -2.0 * diff + mu / dz, diff - mu / dz};
}

struct GridGeometry {
    double dz;
    std::size_t z0_index;
    bool z0_on_node;
};

inline GridGeometry geometry(const DerivedConstants& d, double T, const GridSpec& g) {
    const double z_max = g.z_max > 0.0 ? g.z_max : default_z_max(d, T);
    double dz = z_max / static_cast<double>(g.n_z - 1);
    const double cells = d.z0 / dz;
    if (cells >= 2.0) {
        // Stretch dz slightly so that z0 lands on a node.
        dz = d.z0 / std::round(cells);
        return {dz, static_cast<std::size_t>(std::llround(d.z0 / dz)), true};
    }
    return {dz, static_cast<std::size_t>(std::llround(cells)), d.z0 == 0.0};
}

/// Solves a tridiagonal system in place (Thomas algorithm); rhs becomes the solution.
inline void thomas(std::vector<double>& a, std::vector<double>& b, std::vector<double>& c, std::vector<double>& rhs) {
    const std::size_t n = rhs.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double m = a[i] / b[i - 1];
        b[i] -= m * c[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    rhs[n - 1] /= b[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - c[i] * rhs[i + 1]) / b[i];
}

class Marcher {
public:
    Marcher(const DerivedConstants& d, Sign sign, double T, const GridSpec& g, const GridGeometry& geo)
        : d_(d), sign_(sign), T_(T), g_(g), n_(g.n_z), dt_(T / static_cast<double>(g.n_t)) {
        const double v_minus = d.variance_rate(-1.0);
        const double v_plus = d.variance_rate(1.0);
        st_[0] = stencil(v_minus, d.mu, geo.dz);
        st_[1] = stencil(v_plus, d.mu, geo.dz);
        candidate_ = static_cast<std::int8_t>(DerivedConstants::candidate_control(sign));
        z_max_ = geo.dz * static_cast<double>(n_ - 1);
        if (g.scheme == Scheme::explicit_) {
            for (const Stencil& s : st_) {
                require(dt_ * -s.diag <= 1.0, "stability",
                        "explicit scheme unstable: need dt <= " + std::to_string(1.0 / -s.diag) + ", got " +
                            std::to_string(dt_));
            }
        }
        a_.resize(n_);
        b_.resize(n_);
        c_.resize(n_);
        rhs_.resize(n_);
    }

    [[nodiscard]] std::int8_t candidate() const { return candidate_; }

    double boundary(double s) const {
        if (s <= 0.0 || g_.boundary_mode == BoundaryMode::one) return 1.0;
        return phi_at(d_, z_max_, s, sign_);
    }

    /// Advances F from layer j - 1 to layer j; `ctl` holds the previous controls on
    /// entry and the new ones on exit. Returns the number of policy sweeps.
    std::size_t step(std::vector<double>& F, std::vector<std::int8_t>& ctl, std::size_t j) {
        const double s_new = j == g_.n_t ? T_ : static_cast<double>(j) * dt_;
        return g_.scheme == Scheme::implicit ? implicit_step(F, ctl, s_new) : explicit_step(F, ctl, s_new);
    }

private:
    const Stencil& of(std::int8_t c) const { return st_[c > 0 ? 1 : 0]; }

    /// Optimal control at node i for values F, ties resolved to the candidate.
    std::int8_t choose(const std::vector<double>& F, std::size_t i) const {
        auto apply = [&](const Stencil& s) { return s.lower * F[i - 1] + s.diag * F[i] + s.upper * F[i + 1]; };
        const double lm = apply(st_[0]);
        const double lp = apply(st_[1]);
        const double scale = (std::abs(F[i - 1]) + std::abs(F[i]) + std::abs(F[i + 1])) *
                             std::max(-st_[0].diag, -st_[1].diag);
        if (std::abs(lm - lp) <= 64.0 * std::numeric_limits<double>::epsilon() * scale) return candidate_;
        const bool minus_better = sign_ == Sign::plus ? lm < lp : lm > lp;
        return minus_better ? std::int8_t{-1} : std::int8_t{1};
    }

    std::size_t implicit_step(std::vector<double>& F, std::vector<std::int8_t>& ctl, double s_new) {
        const std::vector<double> prev = F;
        const double bnd = boundary(s_new);
        std::size_t sweeps = 0;
        for (;;) {
            ++sweeps;
            a_[0] = 0.0, b_[0] = 1.0, c_[0] = 0.0, rhs_[0] = 0.0;
            a_[n_ - 1] = 0.0, b_[n_ - 1] = 1.0, c_[n_ - 1] = 0.0, rhs_[n_ - 1] = bnd;
            for (std::size_t i = 1; i + 1 < n_; ++i) {
                const Stencil& s = of(ctl[i]);
                a_[i] = -dt_ * s.lower;
                b_[i] = 1.0 - dt_ * s.diag;
                c_[i] = -dt_ * s.upper;
                rhs_[i] = prev[i];
            }
            thomas(a_, b_, c_, rhs_);
            F = rhs_;
            bool changed = false;
            for (std::size_t i = 1; i + 1 < n_; ++i) {
                const std::int8_t c = choose(F, i);
                if (c != ctl[i]) {
                    ctl[i] = c;
                    changed = true;
                }
            }
            if (!changed || sweeps >= 200) break;
        }
        ctl[0] = ctl[n_ - 1] = candidate_;
        return sweeps;
    }

    std::size_t explicit_step(std::vector<double>& F, std::vector<std::int8_t>& ctl, double s_new) {
        const std::vector<double> prev = F;
        for (std::size_t i = 1; i + 1 < n_; ++i) {
            ctl[i] = choose(prev, i);
            const Stencil& s = of(ctl[i]);
            F[i] = prev[i] + dt_ * (s.lower * prev[i - 1] + s.diag * prev[i] + s.upper * prev[i + 1]);
        }
        F[0] = 0.0;
        F[n_ - 1] = boundary(s_new);
        ctl[0] = ctl[n_ - 1] = candidate_;
        return 1;
    }

    const DerivedConstants& d_;
    Sign sign_;
    double T_;
    GridSpec g_;
    std::size_t n_;
    double dt_;
    double z_max_ = 0.0;
    Stencil st_[2];
    std::int8_t candidate_ = -1;
    std::vector<double> a_, b_, c_, rhs_;
};

inline ValueSurface solve_impl(const DerivedConstants& d, Sign sign, double T, const GridSpec& g, bool keep_all) {
    require(T > 0.0 && std::isfinite(T), "non_positive_horizon", "horizon T must be positive");
    require(g.n_z >= 16, "grid_too_small", "n_z must be at least 16");
    require(g.n_t >= 1, "grid_too_small", "n_t must be at least 1");
    require(g.z_max >= 0.0 && std::isfinite(g.z_max), "bad_z_max", "z_max must be finite and non-negative");
    require(g.z_max == 0.0 || g.z_max > d.z0, "bad_z_max", "z_max must exceed z0");

    const GridGeometry geo = geometry(d, T, g);
    ValueSurface out;
    out.sign = sign;
    out.dz = geo.dz;
    out.dt = T / static_cast<double>(g.n_t);
    out.horizon = T;
    out.n_z = g.n_z;
    out.n_t = g.n_t;
    out.z0_index = geo.z0_index;
    out.z0_on_node = geo.z0_on_node;

    Marcher m(d, sign, T, g, geo);
    std::vector<double> F(g.n_z, 1.0);
    F[0] = 0.0;
    std::vector<std::int8_t> ctl(g.n_z, m.candidate());
    if (keep_all) {
        out.values.reserve((g.n_t + 1) * g.n_z);
        out.controls.reserve((g.n_t + 1) * g.n_z);
        out.values.insert(out.values.end(), F.begin(), F.end());
        out.controls.insert(out.controls.end(), ctl.begin(), ctl.end());
    }
    for (std::size_t j = 1; j <= g.n_t; ++j) {
        out.policy_iterations += m.step(F, ctl, j);
        for (double& f : F) f = std::clamp(f, 0.0, 1.0);
        if (keep_all) {
            out.values.insert(out.values.end(), F.begin(), F.end());
            out.controls.insert(out.controls.end(), ctl.begin(), ctl.end());
        }
    }
    out.terminal = std::move(F);
    out.terminal_controls = std::move(ctl);
    return out;
}

}  // namespace detail

/// Full value surface and control field.
inline ValueSurface solve(const DerivedConstants& d, Sign sign, double T, const GridSpec& grid) {
    return detail::solve_impl(d, sign, T, grid, true);
}

/// Terminal layer only; for refinement studies.
inline ValueSurface solve_terminal(const DerivedConstants& d, Sign sign, double T, const GridSpec& grid) {
    return detail::solve_impl(d, sign, T, grid, false);
}

/// Nearest-node feedback policy; beyond the grid the candidate control is used.
inline GridFeedback extract_policy(const ValueSurface& s) {
    require(!s.controls.empty(), "missing_control_field", "surface was solved without the control field");
    auto f = std::make_shared<ControlField>();
    f->dz = s.dz;
    f->dt = s.dt;
    f->n_z = s.n_z;
    f->n_t = s.n_t;
    f->horizon = s.horizon;
    f->controls = s.controls;
    return GridFeedback{std::move(f), DerivedConstants::candidate_control(s.sign)};
}

/// Largest |F(z, T) - phi(z, T)| over interior nodes of the terminal layer.
inline double max_deviation_from_candidate(const DerivedConstants& d, const ValueSurface& s) {
    double worst = 0.0;
    for (std::size_t i = 1; i < s.n_z; ++i)
        worst = std::max(worst, std::abs(s.terminal[i] - phi_at(d, s.z(i), s.horizon, s.sign)));
    return worst;
}

/// The grid with z_max made explicit, after the shift that puts z0 on a node.
/// Refinements of the result keep z0 on a node.
inline GridSpec aligned(const DerivedConstants& d, double T, const GridSpec& g) {
    GridSpec out = g;
    out.z_max = detail::geometry(d, T, g).dz * static_cast<double>(g.n_z - 1);
    return out;
}

/// Refined grid: dz halved, dt quartered.
inline GridSpec refine(const GridSpec& g) {
    GridSpec r = g;
    r.n_z = 2 * g.n_z - 1;
    r.n_t = 4 * g.n_t;
    return r;
}

struct GapReport {
    Sign sign = Sign::plus;
    double T = 0.0;
    double F = 0.0;          ///< value on the refined grid
    double F_coarse = 0.0;
    double phi = 0.0;
    double gap = 0.0;        ///< phi - F (plus) or F - phi (minus); > 0 means the candidate is beaten
    double error_estimate = 0.0;
    bool significant = false;
    OptimalityVerdict verdict;
    bool consistent = true;
};

/// Grid convergence error estimate for the refined solution: Fs |f_fine - f_coarse| / (r^p - 1)
/// with safety factor Fs = 3, ratio r = 2 and order p = 2.
inline double richardson_error(double fine, double coarse) {
    constexpr double safety = 3.0;
    constexpr double r_pow_p = 4.0;
    return safety * std::abs(fine - coarse) / (r_pow_p - 1.0);
}

inline GapReport gap_report(const DerivedConstants& d, Sign sign, double T, const GridSpec& grid) {
    if (d.coupled_at_start()) throw InputError("z0_zero", "gap report needs distinct starting points");
    GapReport r;
    r.sign = sign;
    r.T = T;
    r.verdict = classify_finite_horizon(d, sign, T);
    const GridSpec g = aligned(d, T, grid);
    const ValueSurface coarse = solve_terminal(d, sign, T, g);
    const ValueSurface fine = solve_terminal(d, sign, T, refine(g));
    r.F_coarse = coarse.value_at_start(d.z0);
    r.F = fine.value_at_start(d.z0);
    r.phi = phi(d, T, sign);
    r.gap = sign == Sign::plus ? r.phi - r.F : r.F - r.phi;
    r.error_estimate = richardson_error(r.F, r.F_coarse);
    r.significant = r.gap > r.error_estimate;
    r.consistent = r.significant != r.verdict.candidate_optimal();
    return r;
}

}  // namespace gbmc
