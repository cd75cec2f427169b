#pragma once

// Problem definition for the coupling of two geometric Brownian motions
//
//   dX = X (a1 dt + sigma1 dB),   dY = Y (a2 dt + sigma2 dV),
//
// reduced to the log-ratio Z = log(X/Y), which is a Brownian motion with drift
// -mu and variance rate sigma1^2 + sigma2^2 - 2 sigma1 sigma2 c under the
// instantaneous correlation control c = d[B,V]/dt in [-1, 1].

#include "gbmc/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>

namespace gbmc {

/// Which of the two optimisation directions is meant.
///   plus:  minimise the coupling time; candidate is the mirror coupling (c = -1).
///   minus: maximise the coupling time; candidate is the synchronous coupling (c = +1).
enum class Sign { plus, minus };

inline const char* to_string(Sign s) { return s == Sign::plus ? "plus" : "minus"; }

/// Starting points below this log-distance are treated as already coupled.
inline constexpr double kZeroStartTolerance = 1e-12;

struct ProblemSpec {
    double x = 1.0;
    double y = 1.0;
    double a1 = 0.0;
    double a2 = 0.0;
    double sigma1 = 1.0;
    double sigma2 = 1.0;

    friend bool operator==(const ProblemSpec&, const ProblemSpec&) = default;
};

inline void validate(const ProblemSpec& p) {
    require(std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.a1) &&
                std::isfinite(p.a2) && std::isfinite(p.sigma1) && std::isfinite(p.sigma2),
            "non_finite_parameter", "all six parameters must be finite");
    require(p.x > 0.0 && p.y > 0.0, "non_positive_start", "starting points x and y must be positive");
    require(p.sigma1 * p.sigma2 > 0.0, "volatility_product_not_positive",
            "sigma1 * sigma2 must be strictly positive");
}

/// Exchanges the roles of the two processes.
inline ProblemSpec swap_roles(const ProblemSpec& p) {
    return {p.y, p.x, p.a2, p.a1, p.sigma2, p.sigma1};
}

struct DerivedConstants {
    double mu = 0.0;           ///< a2 - a1 + sigma1^2/2 - sigma2^2/2 (after the swap)
    double sigma_plus = 0.0;   ///< sigma2 + sigma1
    double sigma_minus = 0.0;  ///< sigma2 - sigma1
    double z0 = 0.0;           ///< log(x/y) >= 0 after the swap
    bool swapped = false;      ///< true when x < y and the roles were exchanged
    ProblemSpec reduced;       ///< parameters after the swap, reduced.x >= reduced.y

    /// sigma_plus for Sign::plus, sigma_minus for Sign::minus.
    [[nodiscard]] double sigma(Sign s) const { return s == Sign::plus ? sigma_plus : sigma_minus; }

    /// Variance rate of Z under correlation control c.
    [[nodiscard]] double variance_rate(double c) const {
        const double s1 = reduced.sigma1;
        const double s2 = reduced.sigma2;
        return std::max(0.0, s1 * s1 + s2 * s2 - 2.0 * s1 * s2 * c);
    }

    [[nodiscard]] bool coupled_at_start() const { return z0 == 0.0; }

    /// The candidate control for a problem direction: -1 (mirror) or +1 (synchronous).
    [[nodiscard]] static double candidate_control(Sign s) { return s == Sign::plus ? -1.0 : 1.0; }

    friend bool operator==(const DerivedConstants&, const DerivedConstants&) = default;
};

inline DerivedConstants derive(const ProblemSpec& spec) {
    validate(spec);
    DerivedConstants d;
    d.swapped = spec.x < spec.y;
    d.reduced = d.swapped ? swap_roles(spec) : spec;
    const ProblemSpec& r = d.reduced;
    d.mu = r.a2 - r.a1 + r.sigma1 * r.sigma1 / 2.0 - r.sigma2 * r.sigma2 / 2.0;
    d.sigma_plus = r.sigma2 + r.sigma1;
    d.sigma_minus = r.sigma2 - r.sigma1;
    d.z0 = std::log(r.x / r.y);
    if (d.z0 < kZeroStartTolerance) d.z0 = 0.0;
    return d;
}

// ---------------------------------------------------------------------------
// Analytic verdicts
// ---------------------------------------------------------------------------

enum class Problem { finite_plus, finite_minus, discounted_plus, discounted_minus, stationary_inf, stationary_sup };
enum class Candidate { mirror, synchronous };
enum class Verdict { optimal, suboptimal, degenerate_deterministic };

inline const char* to_string(Problem p) {
    switch (p) {
        case Problem::finite_plus: return "T+";
        case Problem::finite_minus: return "T-";
        case Problem::discounted_plus: return "q+";
        case Problem::discounted_minus: return "q-";
        case Problem::stationary_inf: return "S_inf";
        case Problem::stationary_sup: return "S_sup";
    }
    return "?";
}
inline const char* to_string(Candidate c) { return c == Candidate::mirror ? "mirror" : "synchronous"; }
inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::optimal: return "optimal";
        case Verdict::suboptimal: return "suboptimal";
        case Verdict::degenerate_deterministic: return "degenerate-deterministic";
    }
    return "?";
}

struct OptimalityVerdict {
    Problem problem = Problem::finite_plus;
    Candidate candidate = Candidate::mirror;
    Verdict verdict = Verdict::optimal;
    std::string reason;
    /// Set for the bad case, where the candidate never couples (tau = infinity a.s.).
    bool tau_infinite = false;
    /// P(tau = infinity) under the candidate; filled for the stationary problems.
    std::optional<double> stationary_value;

    /// The candidate solves the problem (a degenerate bad case is trivially optimal).
    [[nodiscard]] bool candidate_optimal() const { return verdict != Verdict::suboptimal; }
};

/// Bad case: synchronous coupling of equal volatilities with mu <= 0; Z never moves toward 0.
inline bool is_bad_case(const DerivedConstants& d, Sign s) {
    return s == Sign::minus && d.sigma_minus == 0.0 && d.mu <= 0.0;
}

/// Optimality of the candidate coupling for the finite-horizon problem with horizon T.
inline OptimalityVerdict classify_finite_horizon(const DerivedConstants& d, Sign sign, double T) {
    require(T > 0.0 && std::isfinite(T), "non_positive_horizon", "horizon T must be positive");
    if (d.coupled_at_start())
        throw InputError("z0_zero", "starting points coincide; classification is vacuous");

    OptimalityVerdict v;
    v.problem = sign == Sign::plus ? Problem::finite_plus : Problem::finite_minus;
    v.candidate = sign == Sign::plus ? Candidate::mirror : Candidate::synchronous;

    if (d.sigma(sign) == 0.0) {
        // Only the synchronous problem can have sigma_minus = 0.
        if (d.mu <= 0.0) {
            v.verdict = Verdict::degenerate_deterministic;
            v.reason = "bad_case_tau_infinite";
            v.tau_infinite = true;
        } else if (T >= d.z0 / d.mu) {
            v.verdict = Verdict::suboptimal;
            v.reason = "sigma_pm_zero_threshold";
        } else {
            v.verdict = Verdict::optimal;
            v.reason = "sigma_pm_zero_threshold";
        }
        return v;
    }
    if (d.mu <= 0.0) {
        v.verdict = Verdict::optimal;
        v.reason = "mu_le_zero";
    } else {
        v.verdict = Verdict::suboptimal;
        v.reason = "mu_pos_sigma_nonzero";
    }
    return v;
}

/// P(tau = infinity) for the candidate coupling of the given direction.
inline double stationary_survival(const DerivedConstants& d, Sign sign) {
    if (d.coupled_at_start() || d.mu > 0.0) return 0.0;
    const double s = d.sigma(sign);
    if (s == 0.0) return 1.0;  // bad case: Z drifts away or stays put
    if (d.mu == 0.0) return 0.0;
    return -std::expm1(2.0 * d.mu * d.z0 / (s * s));
}

struct StationaryVerdict {
    OptimalityVerdict inf;  ///< mirror on (S inf)
    OptimalityVerdict sup;  ///< synchronous on (S sup)
    /// mu > 0 (or z0 = 0): P(tau = infinity) = 0 under every coupling.
    bool zero_for_all_policies = false;
};

inline StationaryVerdict classify_stationary(const DerivedConstants& d) {
    StationaryVerdict out;
    out.inf.problem = Problem::stationary_inf;
    out.inf.candidate = Candidate::mirror;
    out.sup.problem = Problem::stationary_sup;
    out.sup.candidate = Candidate::synchronous;
    out.zero_for_all_policies = d.coupled_at_start() || d.mu > 0.0;
    const char* reason = d.coupled_at_start() ? "z0_zero" : (d.mu > 0.0 ? "mu_pos_all_couple" : "mu_le_zero");
    for (auto [v, sign] : {std::pair{&out.inf, Sign::plus}, std::pair{&out.sup, Sign::minus}}) {
        v->verdict = Verdict::optimal;
        v->reason = reason;
        v->stationary_value = stationary_survival(d, sign);
        v->tau_infinite = !d.coupled_at_start() && is_bad_case(d, sign);
    }
    return out;
}

}  // namespace gbmc
