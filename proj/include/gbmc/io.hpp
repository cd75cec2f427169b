#pragma once

// JSON decoding for run files and CSV/JSON encoding for artifacts. Decoders are
// strict: unknown keys, missing required keys and wrong types raise InputError.

#include "gbmc/error.hpp"
#include "gbmc/hjb.hpp"
#include "gbmc/params.hpp"
#include "gbmc/policy.hpp"
#include "gbmc/simulate.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace gbmc::io {

using json = nlohmann::ordered_json;

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!j.is_object()) throw InputError("not_an_object", where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (std::string_view a : allowed) ok = ok || key == a;
        if (!ok) throw InputError("unknown_field", where + ": unknown field '" + key + "'");
    }
}

inline const json& required(const json& j, const char* key, const std::string& where) {
    const auto it = j.find(key);
    if (it == j.end()) throw InputError("missing_field", where + ": missing field '" + key + "'");
    return *it;
}

inline double number(const json& j, const std::string& what) {
    if (!j.is_number()) throw InputError("wrong_type", what + " must be a number");
    return j.get<double>();
}

inline double number_or(const json& j, const char* key, double fallback, const std::string& where) {
    const auto it = j.find(key);
    return it == j.end() ? fallback : number(*it, where + "." + key);
}

inline std::uint64_t count_or(const json& j, const char* key, std::uint64_t fallback, const std::string& where) {
    const auto it = j.find(key);
    if (it == j.end()) return fallback;
    const bool ok = it->is_number_unsigned() || (it->is_number_integer() && it->get<std::int64_t>() >= 0);
    if (!ok)
        throw InputError("wrong_type", where + "." + key + " must be a non-negative integer");
    return it->get<std::uint64_t>();
}

inline bool flag_or(const json& j, const char* key, bool fallback, const std::string& where) {
    const auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_boolean()) throw InputError("wrong_type", where + "." + key + " must be a boolean");
    return it->get<bool>();
}

inline std::string string_or(const json& j, const char* key, const std::string& fallback, const std::string& where) {
    const auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_string()) throw InputError("wrong_type", where + "." + key + " must be a string");
    return it->get<std::string>();
}

inline std::vector<double> numbers_or(const json& j, const char* key, std::vector<double> fallback,
                                      const std::string& where) {
    const auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_array()) throw InputError("wrong_type", where + "." + key + " must be an array of numbers");
    std::vector<double> out;
    for (const json& v : *it) out.push_back(number(v, where + "." + key + "[]"));
    return out;
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

inline ProblemSpec parse_spec(const json& j) {
    const std::string where = "spec";
    check_keys(j, {"x", "y", "a1", "a2", "sigma1", "sigma2"}, where);
    ProblemSpec p;
    p.x = number(required(j, "x", where), "spec.x");
    p.y = number(required(j, "y", where), "spec.y");
    p.a1 = number(required(j, "a1", where), "spec.a1");
    p.a2 = number(required(j, "a2", where), "spec.a2");
    p.sigma1 = number(required(j, "sigma1", where), "spec.sigma1");
    p.sigma2 = number(required(j, "sigma2", where), "spec.sigma2");
    validate(p);
    return p;
}

inline json to_json(const ProblemSpec& p) {
    return {{"x", p.x}, {"y", p.y}, {"a1", p.a1}, {"a2", p.a2}, {"sigma1", p.sigma1}, {"sigma2", p.sigma2}};
}

inline Sign parse_sign(const json& j, const std::string& where) {
    if (!j.is_string()) throw InputError("wrong_type", where + " must be \"plus\" or \"minus\"");
    const auto s = j.get<std::string>();
    if (s == "plus") return Sign::plus;
    if (s == "minus") return Sign::minus;
    throw InputError("bad_sign", where + " must be \"plus\" or \"minus\", got \"" + s + "\"");
}

inline Sign sign_or(const json& j, const char* key, Sign fallback, const std::string& where) {
    const auto it = j.find(key);
    return it == j.end() ? fallback : parse_sign(*it, where + "." + key);
}

inline SimConfig parse_sim_config(const json& j, const SimConfig& defaults = {}) {
    const std::string where = "cfg";
    check_keys(j, {"n_paths", "dt", "horizon", "seed", "bridge_correction"}, where);
    SimConfig c = defaults;
    c.n_paths = count_or(j, "n_paths", c.n_paths, where);
    c.dt = number_or(j, "dt", c.dt, where);
    c.horizon = number_or(j, "horizon", c.horizon, where);
    c.master_seed = count_or(j, "seed", c.master_seed, where);
    c.bridge_correction = flag_or(j, "bridge_correction", c.bridge_correction, where);
    validate(c);
    return c;
}

inline json to_json(const SimConfig& c) {
    return {{"n_paths", c.n_paths},
            {"dt", c.dt},
            {"horizon", c.horizon},
            {"seed", c.master_seed},
            {"bridge_correction", c.bridge_correction}};
}

inline GridSpec parse_grid(const json& j) {
    const std::string where = "grid";
    check_keys(j, {"z_max", "n_z", "n_t", "boundary_mode", "scheme"}, where);
    GridSpec g;
    g.z_max = number_or(j, "z_max", g.z_max, where);
    g.n_z = count_or(j, "n_z", g.n_z, where);
    g.n_t = count_or(j, "n_t", g.n_t, where);
    const std::string bm = string_or(j, "boundary_mode", "analytic-mirror", where);
    if (bm == "analytic-mirror") g.boundary_mode = BoundaryMode::analytic_candidate;
    else if (bm == "one") g.boundary_mode = BoundaryMode::one;
    else throw InputError("bad_boundary_mode", "grid.boundary_mode must be \"analytic-mirror\" or \"one\"");
    const std::string sc = string_or(j, "scheme", "implicit", where);
    if (sc == "implicit") g.scheme = Scheme::implicit;
    else if (sc == "explicit") g.scheme = Scheme::explicit_;
    else throw InputError("bad_scheme", "grid.scheme must be \"implicit\" or \"explicit\"");
    require(g.n_z >= 16, "grid_too_small", "grid.n_z must be at least 16");
    require(g.n_t >= 1, "grid_too_small", "grid.n_t must be at least 1");
    return g;
}

inline json to_json(const GridSpec& g) {
    return {{"z_max", g.z_max},
            {"n_z", g.n_z},
            {"n_t", g.n_t},
            {"boundary_mode", to_string(g.boundary_mode)},
            {"scheme", to_string(g.scheme)}};
}

/// Policies:
///   {"type": "mirror"} | {"type": "synchronous"} | {"type": "constant", "c": 0.5}
///   {"type": "switching", "z_center", "t_center", "r_z", "r_t", "inside"?, "outside"?}
///   {"type": "switching-auto", "sign"?, "horizon"}   box located where phi_xy < 0
///   {"type": "hjb-feedback", "sign"?, "horizon", "grid"?}
/// The last two need the problem constants, hence `d`.
inline CouplingPolicy parse_policy(const json& j, const DerivedConstants& d) {
    const std::string where = "policy";
    if (!j.is_object()) throw InputError("not_an_object", "policy must be a JSON object");
    const std::string type = [&] {
        const json& t = required(j, "type", where);
        if (!t.is_string()) throw InputError("wrong_type", "policy.type must be a string");
        return t.get<std::string>();
    }();
    if (type == "mirror") {
        check_keys(j, {"type"}, where);
        return Mirror{};
    }
    if (type == "synchronous") {
        check_keys(j, {"type"}, where);
        return Synchronous{};
    }
    if (type == "constant") {
        check_keys(j, {"type", "c"}, where);
        CouplingPolicy p = Constant{number(required(j, "c", where), "policy.c")};
        validate(p);
        return p;
    }
    if (type == "switching") {
        check_keys(j, {"type", "z_center", "t_center", "r_z", "r_t", "inside", "outside"}, where);
        Switching s;
        s.box.z_center = number(required(j, "z_center", where), "policy.z_center");
        s.box.t_center = number(required(j, "t_center", where), "policy.t_center");
        s.box.r_z = number(required(j, "r_z", where), "policy.r_z");
        s.box.r_t = number(required(j, "r_t", where), "policy.r_t");
        s.inside = number_or(j, "inside", s.inside, where);
        s.outside = number_or(j, "outside", s.outside, where);
        CouplingPolicy p = s;
        validate(p);
        return p;
    }
    if (type == "switching-auto") {
        check_keys(j, {"type", "sign", "horizon"}, where);
        const Sign sign = sign_or(j, "sign", Sign::plus, where);
        const double T = number(required(j, "horizon", where), "policy.horizon");
        const auto box = locate_switching_box(d, sign, T);
        if (!box) throw InputError("no_switching_region", "phi_xy has no negative region for this problem");
        return switching_policy(sign, box->z_center, box->t_center, box->r_z, box->r_t);
    }
    if (type == "hjb-feedback") {
        check_keys(j, {"type", "sign", "horizon", "grid"}, where);
        const Sign sign = sign_or(j, "sign", Sign::plus, where);
        const double T = number(required(j, "horizon", where), "policy.horizon");
        const GridSpec g = j.contains("grid") ? parse_grid(j["grid"]) : GridSpec{};
        return extract_policy(solve(d, sign, T, g));
    }
    throw InputError("unknown_policy", "unknown policy type '" + type + "'");
}

inline json to_json(const CouplingPolicy& p) {
    return std::visit(
        [](const auto& v) -> json {
            using P = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<P, Mirror>) return {{"type", "mirror"}};
            else if constexpr (std::is_same_v<P, Synchronous>) return {{"type", "synchronous"}};
            else if constexpr (std::is_same_v<P, Constant>) return {{"type", "constant"}, {"c", v.c}};
            else if constexpr (std::is_same_v<P, Switching>)
                return {{"type", "switching"}, {"z_center", v.box.z_center}, {"t_center", v.box.t_center},
                        {"r_z", v.box.r_z},     {"r_t", v.box.r_t},           {"inside", v.inside},
                        {"outside", v.outside}};
            else return {{"type", "grid-feedback"}, {"horizon", v.field->horizon}, {"n_z", v.field->n_z},
                         {"n_t", v.field->n_t}};
        },
        p);
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

/// Round-trip decimal formatting (17 significant digits).
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

    class Row {
    public:
        explicit Row(CsvWriter& w) : w_(w) {}
        Row& operator<<(double v) { return add(fmt(v)); }
        Row& operator<<(int v) { return add(std::to_string(v)); }
        Row& operator<<(std::size_t v) { return add(std::to_string(v)); }
        Row& operator<<(bool v) { return add(v ? "true" : "false"); }
        Row& operator<<(const std::string& v) { return add(v); }
        Row& operator<<(const char* v) { return add(v); }
        ~Row() { w_.rows_.push_back(std::move(cells_)); }

    private:
        Row& add(std::string s) {
            cells_.push_back(std::move(s));
            return *this;
        }
        CsvWriter& w_;
        std::vector<std::string> cells_;
    };

    Row row() { return Row(*this); }

    [[nodiscard]] std::string str() const {
        std::ostringstream os;
        write_line(os, header_);
        for (const auto& r : rows_) {
            if (r.size() != header_.size()) throw Error("csv_shape", "row width does not match header");
            write_line(os, r);
        }
        return os.str();
    }

    [[nodiscard]] const std::vector<std::string>& header() const { return header_; }

private:
    static void write_line(std::ostream& os, const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
        os << '\n';
    }
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

/// JSON numbers cannot hold inf/nan; those are written as strings.
inline json num(double v) {
    if (std::isfinite(v)) return v;
    return fmt(v);
}

inline json to_json(const Estimate& e) {
    return {{"mean", num(e.mean)}, {"std_error", num(e.std_error)}, {"n", e.n}, {"kind", to_string(e.kind)}};
}

inline json to_json(const OptimalityVerdict& v) {
    json j{{"problem", to_string(v.problem)},
           {"candidate", to_string(v.candidate)},
           {"verdict", to_string(v.verdict)},
           {"reason", v.reason},
           {"tau_infinite", v.tau_infinite}};
    if (v.stationary_value) j["stationary_value"] = num(*v.stationary_value);
    return j;
}

inline json to_json(const DerivedConstants& d) {
    return {{"mu", d.mu},
            {"sigma_plus", d.sigma_plus},
            {"sigma_minus", d.sigma_minus},
            {"z0", d.z0},
            {"swapped", d.swapped},
            {"reduced", to_json(d.reduced)}};
}

inline json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("io_error", "cannot open run file " + path);
    try {
        return json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError("json_parse_error", e.what());
    }
}

}  // namespace gbmc::io
