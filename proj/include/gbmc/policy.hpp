#pragma once

// Correlation-control policies. A policy maps the reduced state (z, t), and for
// the switching construction, the path's history, to c in [-1, 1], the
// instantaneous correlation between the two driving Brownian motions.

#include "gbmc/analytic.hpp"
#include "gbmc/error.hpp"
#include "gbmc/params.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace gbmc {

struct Mirror {};
struct Synchronous {};
struct Constant {
    double c = 0.0;
};

/// Inner box H1 = [z_center -+ r_z] x [t_center -+ r_t]; the outer box H2 doubles
/// both half-widths. Times are elapsed times since the start.
struct SwitchBox {
    double z_center = 0.0;
    double t_center = 0.0;
    double r_z = 0.0;
    double r_t = 0.0;

    [[nodiscard]] bool degenerate() const { return r_z == 0.0 || r_t == 0.0; }
    [[nodiscard]] bool in_inner(double z, double t) const {
        return std::abs(z - z_center) <= r_z && std::abs(t - t_center) <= r_t;
    }
    [[nodiscard]] bool in_outer(double z, double t) const {
        return std::abs(z - z_center) <= 2.0 * r_z && std::abs(t - t_center) <= 2.0 * r_t;
    }
};

/// `outside` until the first entry into H1, `inside` until the next exit from H2,
/// then `outside` again for the rest of the path.
struct Switching {
    SwitchBox box;
    double outside = -1.0;
    double inside = 1.0;
};

/// Bang-bang control field on a (z, remaining time) grid, as produced by the HJB solver.
struct ControlField {
    double dz = 0.0;
    double dt = 0.0;
    std::size_t n_z = 0;
    std::size_t n_t = 0;     ///< time layers are j = 0..n_t
    double horizon = 0.0;    ///< remaining time at t = 0
    std::vector<std::int8_t> controls;  ///< layer-major: controls[j * n_z + i]

    [[nodiscard]] std::int8_t at(std::size_t i, std::size_t j) const { return controls[j * n_z + i]; }
};

struct GridFeedback {
    std::shared_ptr<const ControlField> field;
    double fallback = -1.0;  ///< used outside the grid (z > z_max or t > horizon)
};

using CouplingPolicy = std::variant<Mirror, Synchronous, Constant, Switching, GridFeedback>;

inline void validate(const CouplingPolicy& policy) {
    auto in_range = [](double c) { return std::isfinite(c) && c >= -1.0 && c <= 1.0; };
    if (const auto* p = std::get_if<Constant>(&policy)) {
        require(in_range(p->c), "control_out_of_range", "constant control must lie in [-1, 1]");
    } else if (const auto* s = std::get_if<Switching>(&policy)) {
        const SwitchBox& b = s->box;
        require(std::isfinite(b.z_center) && std::isfinite(b.t_center) && std::isfinite(b.r_z) &&
                    std::isfinite(b.r_t) && b.r_z >= 0.0 && b.r_t >= 0.0,
                "malformed_box", "switching box needs finite centre and non-negative half-widths");
        require(in_range(s->inside) && in_range(s->outside), "control_out_of_range",
                "switching controls must lie in [-1, 1]");
    } else if (const auto* g = std::get_if<GridFeedback>(&policy)) {
        require(g->field != nullptr, "missing_control_field", "grid feedback policy has no control field");
        const ControlField& f = *g->field;
        require(f.controls.size() == f.n_z * (f.n_t + 1) && f.dz > 0.0 && f.dt > 0.0, "malformed_control_field",
                "control field dimensions are inconsistent");
        require(in_range(g->fallback), "control_out_of_range", "fallback control must lie in [-1, 1]");
    }
}

inline std::string describe(const CouplingPolicy& policy) {
    std::ostringstream os;
    std::visit(
        [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, Mirror>) os << "mirror";
            else if constexpr (std::is_same_v<P, Synchronous>) os << "synchronous";
            else if constexpr (std::is_same_v<P, Constant>) os << "constant(" << p.c << ")";
            else if constexpr (std::is_same_v<P, Switching>)
                os << "switching(z=" << p.box.z_center << ",t=" << p.box.t_center << ",rz=" << p.box.r_z
                   << ",rt=" << p.box.r_t << ",in=" << p.inside << ")";
            else os << "grid-feedback";
        },
        policy);
    return os.str();
}

// ---------------------------------------------------------------------------
// Per-path controllers
// ---------------------------------------------------------------------------

struct FixedController {
    static constexpr bool time_invariant = true;
    double c;
    void reset() {}
    double operator()(double, double) const { return c; }
};

class SwitchingController {
public:
    static constexpr bool time_invariant = false;
    explicit SwitchingController(const Switching& s) : s_(s) {}

    void reset() { phase_ = 0; }

    double operator()(double z, double t) {
        if (s_.box.degenerate()) return s_.outside;
        if (phase_ == 0 && s_.box.in_inner(z, t)) phase_ = 1;
        if (phase_ == 1 && !s_.box.in_outer(z, t)) phase_ = 2;
        return phase_ == 1 ? s_.inside : s_.outside;
    }

private:
    Switching s_;
    int phase_ = 0;
};

class FeedbackController {
public:
    static constexpr bool time_invariant = false;
    explicit FeedbackController(const GridFeedback& g) : f_(g.field.get()), fallback_(g.fallback) {}

    void reset() {}

    /// Nearest-node lookup at remaining time horizon - t.
    double operator()(double z, double t) const {
        const double remaining = f_->horizon - t;
        if (remaining < 0.0) return fallback_;
        const auto i = static_cast<std::size_t>(std::llround(z / f_->dz));
        if (i >= f_->n_z) return fallback_;
        auto j = static_cast<std::size_t>(std::llround(remaining / f_->dt));
        j = std::clamp<std::size_t>(j, 1, f_->n_t);
        return f_->at(i, j);
    }

private:
    const ControlField* f_;
    double fallback_;
};

/// Calls fn with a freshly constructed controller of the policy's concrete type.
template <class Fn>
decltype(auto) with_controller(const CouplingPolicy& policy, Fn&& fn) {
    return std::visit(
        [&](const auto& p) -> decltype(auto) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, Mirror>) return fn(FixedController{-1.0});
            else if constexpr (std::is_same_v<P, Synchronous>) return fn(FixedController{1.0});
            else if constexpr (std::is_same_v<P, Constant>) return fn(FixedController{p.c});
            else if constexpr (std::is_same_v<P, Switching>) return fn(SwitchingController{p});
            else return fn(FeedbackController{p});
        },
        policy);
}

// ---------------------------------------------------------------------------
// Switching coupling built from a region where phi_xy < 0
// ---------------------------------------------------------------------------

/// Uses the candidate control of `sign` outside the box and the opposite control inside.
inline Switching switching_policy(Sign sign, double z_center, double t_center, double r_z, double r_t) {
    Switching s{{z_center, t_center, r_z, r_t}, DerivedConstants::candidate_control(sign),
                -DerivedConstants::candidate_control(sign)};
    validate(CouplingPolicy{s});
    return s;
}

/// Finds a box whose outer rectangle H2 lies inside {phi_xy(z, T - t) < 0} with z > 0 and
/// 0 < t < T, preferring the largest H2. phi_xy is evaluated at the remaining time
/// T - t because the value process of a path at elapsed time t is Phi(., ., T - t).
inline std::optional<SwitchBox> locate_switching_box(const DerivedConstants& d, Sign sign, double T,
                                                     int resolution = 24) {
    require(T > 0.0, "non_positive_horizon", "horizon must be positive");
    if (d.sigma(sign) == 0.0 || d.coupled_at_start()) return std::nullopt;
    const double z_hi = d.z0 + 3.0 * std::abs(d.sigma(sign)) * std::sqrt(T) + std::abs(d.mu) * T;
    auto negative_on_outer = [&](const SwitchBox& b) {
        constexpr int k = 8;
        for (int a = 0; a <= k; ++a) {
            for (int c = 0; c <= k; ++c) {
                const double z = b.z_center + 2.0 * b.r_z * (2.0 * a / k - 1.0);
                const double t = b.t_center + 2.0 * b.r_t * (2.0 * c / k - 1.0);
                if (phi_xy(d, T - t, sign, z) >= 0.0) return false;
            }
        }
        return true;
    };
    std::optional<SwitchBox> best;
    double best_area = 0.0;
    for (int iz = 1; iz < resolution; ++iz) {
        const double zc = z_hi * iz / resolution;
        for (int it = 1; it < resolution; ++it) {
            const double tc = T * it / resolution;
            const double room_t = std::min(tc, T - tc);
            // shrink factor: outer half-widths are 2 rho zc and 2 rho room_t, rho < 1/2
            for (double rho : {0.45, 0.35, 0.25, 0.15, 0.08}) {
                const SwitchBox b{zc, tc, rho * zc, rho * room_t};
                const double area = b.r_z * b.r_t;
                if (area <= best_area) break;
                if (negative_on_outer(b)) {
                    best = b;
                    best_area = area;
                    break;
                }
            }
        }
    }
    return best;
}

}  // namespace gbmc
