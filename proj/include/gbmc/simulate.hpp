#pragma once

// Monte Carlo engine for the coupling time under a correlation-control policy.
//
// Each step freezes the control, so the reduced state moves by an exact Gaussian
// increment with drift -mu and the step's variance rate s. A crossing of 0 between
// two positive endpoints is detected with the Brownian-bridge probability
// exp(-2 z_a z_b / (s h)). Paths are seeded by (master_seed, path index), which
// makes the per-path outcomes independent of the number of workers.

#include "gbmc/error.hpp"
#include "gbmc/params.hpp"
#include "gbmc/parallel.hpp"
#include "gbmc/philox.hpp"
#include "gbmc/policy.hpp"

#include <Eigen/Dense>
#include <boost/random/normal_distribution.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace gbmc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct SimConfig {
    std::size_t n_paths = 10000;
    double dt = 1e-3;
    double horizon = 1.0;
    std::uint64_t master_seed = 1;
    bool bridge_correction = true;
};

inline void validate(const SimConfig& cfg) {
    require(cfg.n_paths >= 1, "no_paths", "n_paths must be at least 1");
    require(cfg.dt > 0.0 && std::isfinite(cfg.dt), "non_positive_dt", "dt must be positive");
    require(cfg.horizon > 0.0 && std::isfinite(cfg.horizon), "non_positive_horizon", "horizon must be positive");
}

/// Per-path coupling times; +infinity marks a path still uncoupled at the horizon.
struct Outcomes {
    std::vector<double> hit_times;
    double horizon = 0.0;

    [[nodiscard]] std::size_t size() const { return hit_times.size(); }
};

inline constexpr std::size_t kPathsPerChunk = 1024;

namespace detail {

inline std::size_t step_count(double horizon, double dt) {
    return static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9));
}

/// Key of the uniforms used for bridge crossings; they are addressed by (path, step)
/// and only computed when a crossing is plausible.
inline std::uint64_t bridge_key(std::uint64_t master_seed) { return master_seed ^ 0x5851F42D4C957F2DULL; }

/// One path of the reduced state. Step k consumes exactly one normal draw and owns
/// the bridge uniform (path, k), so two policies run with the same seed see common
/// random numbers.
template <class Controller>
double simulate_path(const DerivedConstants& d, Controller& ctl, const SimConfig& cfg, std::size_t n_steps,
                     std::uint64_t path) {
    if (d.coupled_at_start()) return 0.0;
    ctl.reset();
    if constexpr (Controller::time_invariant) {
        if (d.variance_rate(ctl(d.z0, 0.0)) == 0.0) {
            // Deterministic reduced state; the bad case never couples.
            if (d.mu <= 0.0) return kInf;
            const double tau = d.z0 / d.mu;
            return tau <= cfg.horizon ? tau : kInf;
        }
    }
    Philox4x32 engine(cfg.master_seed, path);
    const std::uint64_t ukey = bridge_key(cfg.master_seed);
    boost::random::normal_distribution<double> normal;
    double z = d.z0;
    double t = 0.0;
    double c_prev = std::numeric_limits<double>::quiet_NaN();
    double h_prev = 0.0, s = 0.0, sd = 0.0;
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double t_next = k + 1 == n_steps ? cfg.horizon : static_cast<double>(k + 1) * cfg.dt;
        const double h = t_next - t;
        const double c = ctl(z, t);
        if (c != c_prev || h != h_prev) {
            s = d.variance_rate(c);
            sd = std::sqrt(s * h);
            c_prev = c, h_prev = h;
        }
        const double g = normal(engine);
        if (s == 0.0) {
            const double z_next = z - d.mu * h;
            if (z_next <= 0.0) return t + z / d.mu;
            z = z_next;
        } else {
            const double z_next = z - d.mu * h + sd * g;
            if (z_next <= 0.0) return t + 0.5 * h;
            if (cfg.bridge_correction) {
                const double x = 2.0 * z * z_next / (s * h);
                if (x < 60.0 && to_unit_open(Philox4x32::at(ukey, path, k)) < std::exp(-x)) return t + 0.5 * h;
            }
            z = z_next;
        }
        t = t_next;
    }
    return kInf;
}

}  // namespace detail

inline Outcomes simulate_tau(const DerivedConstants& d, const CouplingPolicy& policy, const SimConfig& cfg,
                             unsigned workers = 1) {
    validate(cfg);
    validate(policy);
    Outcomes out;
    out.horizon = cfg.horizon;
    out.hit_times.assign(cfg.n_paths, kInf);
    const std::size_t n_steps = detail::step_count(cfg.horizon, cfg.dt);
    const std::size_t n_chunks = (cfg.n_paths + kPathsPerChunk - 1) / kPathsPerChunk;
    parallel_chunks(n_chunks, workers, [&](std::size_t chunk) {
        with_controller(policy, [&](auto ctl) {
            const std::size_t end = std::min(cfg.n_paths, (chunk + 1) * kPathsPerChunk);
            for (std::size_t p = chunk * kPathsPerChunk; p < end; ++p)
                out.hit_times[p] = detail::simulate_path(d, ctl, cfg, n_steps, p);
        });
    });
    return out;
}

// ---------------------------------------------------------------------------
// Estimates
// ---------------------------------------------------------------------------

enum class EstimateKind { survival, laplace, ergodic, tail_rate, difference };

inline const char* to_string(EstimateKind k) {
    switch (k) {
        case EstimateKind::survival: return "survival";
        case EstimateKind::laplace: return "laplace";
        case EstimateKind::ergodic: return "ergodic";
        case EstimateKind::tail_rate: return "tail-rate";
        case EstimateKind::difference: return "difference";
    }
    return "?";
}

/// Sample mean with standard error sqrt(m2)/n, where m2 is the sum of squared
/// deviations. Keeping m2 makes merging exact up to round-off.
struct Estimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;
    EstimateKind kind = EstimateKind::survival;
    double m2 = 0.0;

    static Estimate from_moments(EstimateKind kind, std::size_t n, double mean, double m2) {
        Estimate e{mean, 0.0, n, kind, std::max(0.0, m2)};
        e.std_error = n > 0 ? std::sqrt(e.m2) / static_cast<double>(n) : 0.0;
        return e;
    }

    template <class Range>
    static Estimate from_samples(EstimateKind kind, const Range& xs) {
        double mean = 0.0;
        double m2 = 0.0;
        std::size_t n = 0;
        for (double x : xs) {
            ++n;
            const double delta = x - mean;
            mean += delta / static_cast<double>(n);
            m2 += delta * (x - mean);
        }
        return from_moments(kind, n, mean, m2);
    }
};

/// Chan et al. pairwise combination; associative and commutative up to round-off.
inline Estimate merge(const Estimate& a, const Estimate& b) {
    require(a.kind == b.kind, "estimate_kind_mismatch", "only estimates of the same kind can be merged");
    if (a.n == 0) return b;
    if (b.n == 0) return a;
    const double na = static_cast<double>(a.n);
    const double nb = static_cast<double>(b.n);
    const double n = na + nb;
    const double delta = b.mean - a.mean;
    const double mean = (na * a.mean + nb * b.mean) / n;
    const double m2 = a.m2 + b.m2 + delta * delta * na * nb / n;
    return Estimate::from_moments(a.kind, a.n + b.n, mean, m2);
}

namespace detail {
template <class F>
Estimate mean_of(EstimateKind kind, const Outcomes& o, F f) {
    double mean = 0.0;
    double m2 = 0.0;
    std::size_t n = 0;
    for (double tau : o.hit_times) {
        const double x = f(tau);
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
    }
    return Estimate::from_moments(kind, n, mean, m2);
}
}  // namespace detail

/// Fraction of paths still uncoupled at T, with binomial standard error.
inline Estimate estimate_survival(const Outcomes& o, double T) {
    require(!o.hit_times.empty(), "empty_outcomes", "no simulated paths");
    require(T <= o.horizon * (1.0 + 1e-12), "beyond_horizon", "survival time beyond the simulated horizon");
    std::size_t alive = 0;
    for (double tau : o.hit_times) alive += tau > T;
    const double n = static_cast<double>(o.size());
    const double p = static_cast<double>(alive) / n;
    return Estimate::from_moments(EstimateKind::survival, o.size(), p, n * p * (1.0 - p));
}

/// Survival at several times in one pass over sorted hit times.
inline std::vector<Estimate> survival_curve(const Outcomes& o, std::span<const double> times) {
    require(!o.hit_times.empty(), "empty_outcomes", "no simulated paths");
    std::vector<double> sorted = o.hit_times;
    std::sort(sorted.begin(), sorted.end());
    std::vector<Estimate> out;
    out.reserve(times.size());
    const double n = static_cast<double>(sorted.size());
    for (double T : times) {
        require(T <= o.horizon * (1.0 + 1e-12), "beyond_horizon", "survival time beyond the simulated horizon");
        const auto alive = static_cast<double>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), T));
        const double p = alive / n;
        out.push_back(Estimate::from_moments(EstimateKind::survival, sorted.size(), p, n * p * (1.0 - p)));
    }
    return out;
}

/// E exp(-q tau) bracketed by the two treatments of censored paths: 0 (lower) and
/// exp(-q horizon) (upper).
struct LaplaceBracket {
    double q = 0.0;
    Estimate lower;
    Estimate upper;
    bool horizon_too_short = false;

    [[nodiscard]] double width() const { return upper.mean - lower.mean; }
    /// Whether value lies within the bracket widened by k standard errors.
    [[nodiscard]] bool contains(double value, double k = 3.0) const {
        return value >= lower.mean - k * lower.std_error && value <= upper.mean + k * upper.std_error;
    }
};

inline LaplaceBracket estimate_laplace(const Outcomes& o, double q, double tolerance = kInf) {
    require(q > 0.0, "non_positive_rate", "q must be positive");
    require(!o.hit_times.empty(), "empty_outcomes", "no simulated paths");
    LaplaceBracket b;
    b.q = q;
    const double censored = std::exp(-q * o.horizon);
    b.lower = detail::mean_of(EstimateKind::laplace, o, [q](double tau) { return tau == kInf ? 0.0 : std::exp(-q * tau); });
    b.upper = detail::mean_of(EstimateKind::laplace, o,
                              [q, censored](double tau) { return tau == kInf ? censored : std::exp(-q * tau); });
    b.horizon_too_short = b.width() > tolerance;
    return b;
}

/// Mean of f(a_i) - f(b_i) over paths with matched seeds; the standard error is that
/// of the paired differences.
template <class F>
Estimate paired_difference(const Outcomes& a, const Outcomes& b, F f) {
    require(a.size() == b.size() && a.size() > 0, "unmatched_outcomes", "paired estimates need equal path counts");
    double mean = 0.0;
    double m2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = f(a.hit_times[i]) - f(b.hit_times[i]);
        const double delta = x - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (x - mean);
    }
    return Estimate::from_moments(EstimateKind::difference, a.size(), mean, m2);
}

struct ErgodicEstimate {
    Estimate at_horizon;      ///< fraction uncoupled at the horizon, estimating P(tau = inf)
    double time_average = 0;  ///< (1/T) int_0^T P(tau > t) dt on the supplied grid, trapezoid rule
};

inline ErgodicEstimate estimate_ergodic(const Outcomes& o, std::span<const double> grid) {
    require(!o.hit_times.empty(), "empty_outcomes", "no simulated paths");
    ErgodicEstimate e;
    const Estimate s = estimate_survival(o, o.horizon);
    e.at_horizon = Estimate::from_moments(EstimateKind::ergodic, s.n, s.mean, s.m2);
    std::vector<double> times;
    times.reserve(grid.size() + 1);
    if (grid.empty() || grid.front() > 0.0) times.push_back(0.0);
    times.insert(times.end(), grid.begin(), grid.end());
    if (times.size() < 2) return e;
    const auto curve = survival_curve(o, times);
    double integral = 0.0;
    for (std::size_t i = 1; i < times.size(); ++i)
        integral += 0.5 * (curve[i].mean + curve[i - 1].mean) * (times[i] - times[i - 1]);
    e.time_average = integral / times.back();
    return e;
}

// ---------------------------------------------------------------------------
// Exponential tail rate
// ---------------------------------------------------------------------------

/// Geometric grid on [T/4, T].
inline std::vector<double> tail_grid(double T, std::size_t points = 8) {
    require(T > 0.0 && points >= 2, "bad_tail_grid", "tail grid needs T > 0 and at least two points");
    std::vector<double> g(points);
    for (std::size_t i = 0; i < points; ++i)
        g[i] = T / 4.0 * std::pow(4.0, static_cast<double>(i) / static_cast<double>(points - 1));
    g.back() = T;
    return g;
}

struct TailOptions {
    /// Simulate under the driftless law and reweight by the likelihood ratio
    /// (exponential tilting); applied only when mu > 0.
    bool tilted = true;
};

struct TailPoint {
    double t = 0.0;
    double survival = 0.0;
    double std_error = 0.0;
    std::size_t survivors = 0;
};

struct TailFit {
    double rate = 0.0;       ///< coefficient of t in log S(t) = a + rate t + b log t
    double std_error = 0.0;
    double band_lo = 0.0;    ///< rate -+ 1.96 std_error
    double band_hi = 0.0;
    double log_t_coefficient = 0.0;
    bool insufficient_data = false;
    std::vector<TailPoint> points;
};

namespace detail {

struct TailAccumulator {
    std::vector<double> sum_w, sum_w2;
    std::vector<std::size_t> survivors;
    explicit TailAccumulator(std::size_t k) : sum_w(k, 0.0), sum_w2(k, 0.0), survivors(k, 0) {}
};

template <class Controller>
void tail_path(const DerivedConstants& d, Controller& ctl, const SimConfig& cfg, std::span<const double> schedule,
               std::span<const std::size_t> grid_index, bool tilt, std::uint64_t path, TailAccumulator& acc) {
    ctl.reset();
    Philox4x32 engine(cfg.master_seed, path);
    const std::uint64_t ukey = bridge_key(cfg.master_seed);
    boost::random::normal_distribution<double> normal;
    double z = d.z0;
    double t = 0.0;
    double log_w = 0.0;
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        const double h = schedule[k] - t;
        const double s = d.variance_rate(ctl(z, t));
        const double g = normal(engine);
        if (s == 0.0) {
            z -= d.mu * h;
            if (z <= 0.0) return;
        } else {
            const double drift = tilt ? 0.0 : -d.mu * h;
            const double dz = drift + std::sqrt(s * h) * g;
            const double z_next = z + dz;
            if (z_next <= 0.0) return;
            if (cfg.bridge_correction) {
                const double x = 2.0 * z * z_next / (s * h);
                if (x < 60.0 && to_unit_open(Philox4x32::at(ukey, path, k)) < std::exp(-x)) return;
            }
            if (tilt) log_w += -d.mu * dz / s - d.mu * d.mu * h / (2.0 * s);
            z = z_next;
        }
        t = schedule[k];
        const std::size_t gi = grid_index[k];
        if (gi != std::size_t(-1)) {
            const double w = std::exp(log_w);
            acc.sum_w[gi] += w;
            acc.sum_w2[gi] += w * w;
            ++acc.survivors[gi];
        }
    }
}

}  // namespace detail

/// Weighted least-squares fit of log survival against (1, t, log t) over the grid.
/// The log t column absorbs the polynomial prefactor of first-passage tails, so the
/// t coefficient estimates the exponential rate. Grid points without survivors are
/// dropped; with fewer than 3 left the fit reports insufficient data and rate -inf.
inline TailFit tail_rate_regression(const DerivedConstants& d, const CouplingPolicy& policy,
                                    std::span<const double> grid, const SimConfig& cfg, unsigned workers = 1,
                                    TailOptions options = {}) {
    validate(policy);
    require(grid.size() >= 3 && std::is_sorted(grid.begin(), grid.end()) && grid.front() > 0.0, "bad_tail_grid",
            "tail grid needs at least 3 increasing positive times");
    SimConfig run = cfg;
    run.horizon = grid.back();
    validate(run);

    // Uniform steps with the grid times inserted as step ends.
    std::vector<double> schedule;
    std::vector<std::size_t> grid_index;
    {
        const std::size_t n = detail::step_count(run.horizon, run.dt);
        std::size_t g = 0;
        for (std::size_t k = 1; k <= n; ++k) {
            const double tk = k == n ? run.horizon : static_cast<double>(k) * run.dt;
            while (g < grid.size() && grid[g] < tk - 1e-12) {
                schedule.push_back(grid[g]);
                grid_index.push_back(g++);
            }
            schedule.push_back(tk);
            const bool on_grid = g < grid.size() && std::abs(grid[g] - tk) <= 1e-12;
            grid_index.push_back(on_grid ? g++ : std::size_t(-1));
        }
    }

    const bool tilt = options.tilted && d.mu > 0.0;
    const std::size_t n_chunks = (run.n_paths + kPathsPerChunk - 1) / kPathsPerChunk;
    std::vector<detail::TailAccumulator> chunks(n_chunks, detail::TailAccumulator(grid.size()));
    if (!d.coupled_at_start()) {
        parallel_chunks(n_chunks, workers, [&](std::size_t c) {
            with_controller(policy, [&](auto ctl) {
                const std::size_t end = std::min(run.n_paths, (c + 1) * kPathsPerChunk);
                for (std::size_t p = c * kPathsPerChunk; p < end; ++p)
                    detail::tail_path(d, ctl, run, schedule, grid_index, tilt, p, chunks[c]);
            });
        });
    }
    detail::TailAccumulator total(grid.size());
    for (const auto& c : chunks) {
        for (std::size_t i = 0; i < grid.size(); ++i) {
            total.sum_w[i] += c.sum_w[i];
            total.sum_w2[i] += c.sum_w2[i];
            total.survivors[i] += c.survivors[i];
        }
    }

    TailFit fit;
    const double n = static_cast<double>(run.n_paths);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (total.survivors[i] == 0) continue;
        const double mean = total.sum_w[i] / n;
        const double var = std::max(0.0, total.sum_w2[i] / n - mean * mean) / n;
        fit.points.push_back({grid[i], mean, std::sqrt(var), total.survivors[i]});
    }
    if (fit.points.size() < 3) {
        fit.insufficient_data = true;
        fit.rate = -kInf;
        fit.band_lo = fit.band_hi = -kInf;
        return fit;
    }

    Eigen::Matrix3d normal_matrix = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    for (const TailPoint& p : fit.points) {
        // delta method: Var(log S) = Var(S)/S^2, floored by one-survivor binomial noise
        const double rel = std::max(p.std_error / p.survival, 1.0 / std::sqrt(static_cast<double>(p.survivors)));
        const double w = 1.0 / (rel * rel);
        const Eigen::Vector3d x(1.0, p.t, std::log(p.t));
        normal_matrix += w * x * x.transpose();
        rhs += w * std::log(p.survival) * x;
    }
    const Eigen::Matrix3d cov = normal_matrix.inverse();
    const Eigen::Vector3d beta = cov * rhs;
    fit.rate = beta(1);
    fit.log_t_coefficient = beta(2);
    fit.std_error = std::sqrt(std::max(0.0, cov(1, 1)));
    fit.band_lo = fit.rate - 1.96 * fit.std_error;
    fit.band_hi = fit.rate + 1.96 * fit.std_error;
    return fit;
}

// ---------------------------------------------------------------------------
// Raw dump
// ---------------------------------------------------------------------------

/// Writes one little-endian IEEE-754 double per path; censored paths are +infinity.
inline void write_hit_times(const std::string& path, const Outcomes& o) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("io_error", "cannot open " + path);
    for (double tau : o.hit_times) {
        auto bits = std::bit_cast<std::uint64_t>(tau);
        unsigned char bytes[8];
        for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
        f.write(reinterpret_cast<const char*>(bytes), 8);
    }
}

inline std::vector<double> read_hit_times(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("io_error", "cannot open " + path);
    std::vector<double> out;
    unsigned char bytes[8];
    while (f.read(reinterpret_cast<char*>(bytes), 8)) {
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
        out.push_back(std::bit_cast<double>(bits));
    }
    return out;
}

}  // namespace gbmc
