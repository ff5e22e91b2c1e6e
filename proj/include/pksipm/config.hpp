#pragma once

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "geometry.hpp"
#include "nash.hpp"
#include "pksipm.hpp"
#include "regularity.hpp"

namespace pksipm {

using Json = nlohmann::json;

inline Json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    try {
        return Json::parse(is);
    } catch (const Json::exception& e) {
        throw ConfigError("malformed JSON in " + path + ": " + e.what());
    }
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Hash of the canonical (sorted-key, compact) serialisation.
inline std::string config_hash(const Json& j) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << fnv1a64(j.dump());
    return os.str();
}

namespace detail {

inline void require_object(const Json& j, const char* what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
}

inline void allow_keys(const Json& j, const char* what, std::initializer_list<const char*> keys) {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!ok.count(it.key())) throw ConfigError(std::string("unknown key '") + it.key() + "' in " + what);
}

template <class T>
T get(const Json& j, const char* key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError(std::string("key '") + key + "' has the wrong type");
    }
}

template <class T>
T need(const Json& j, const char* key, const char* what) {
    if (!j.contains(key)) throw ConfigError(std::string("missing key '") + key + "' in " + what);
    return get<T>(j, key, T{});
}

}  // namespace detail

// {"family": "disk", "params": [1.0], "eps_star": 0.25}
// {"family": "chart_table", "heights": [...], "left": [...], "right": [...]}
inline DomainSpec parse_domain(const Json& j) {
    detail::require_object(j, "domain");
    detail::allow_keys(j, "domain", {"family", "params", "eps_star", "heights", "left", "right"});
    const auto family = detail::need<std::string>(j, "family", "domain");
    const double eps = detail::get<double>(j, "eps_star", -1.0);
    try {
        if (family == "chart_table")
            return make_chart_table(detail::need<std::vector<double>>(j, "heights", "domain"),
                                    detail::need<std::vector<double>>(j, "left", "domain"),
                                    detail::need<std::vector<double>>(j, "right", "domain"), eps);
        return builtin_domain(family, detail::need<std::vector<double>>(j, "params", "domain"), eps);
    } catch (const ParameterError& e) {
        throw ConfigError(std::string("domain: ") + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(std::string("domain: ") + e.what());
    }
}

inline SimConfig parse_sim_config(const Json& j) {
    detail::require_object(j, "simulation config");
    detail::allow_keys(j, "simulation config",
                       {"domain", "resolution", "g", "initial", "t_end", "dt_init", "cfl", "output_interval",
                        "snapshot_interval", "solver", "variance_ceiling_factor", "variance_ceiling", "mode",
                        "neumann_projection", "max_steps"});
    SimConfig c;
    c.domain = parse_domain(detail::need<Json>(j, "domain", "simulation config"));
    c.cell_size = detail::get<double>(j, "resolution", c.cell_size);
    c.g = detail::get<double>(j, "g", c.g);
    c.t_end = detail::get<double>(j, "t_end", c.t_end);
    c.dt_init = detail::get<double>(j, "dt_init", c.dt_init);
    c.cfl = detail::get<double>(j, "cfl", c.cfl);
    c.output_interval = detail::get<double>(j, "output_interval", c.output_interval);
    c.snapshot_interval = detail::get<double>(j, "snapshot_interval", c.snapshot_interval);
    c.variance_ceiling_factor = detail::get<double>(j, "variance_ceiling_factor", c.variance_ceiling_factor);
    c.variance_ceiling = detail::get<double>(j, "variance_ceiling", c.variance_ceiling);
    c.neumann_projection = detail::get<bool>(j, "neumann_projection", c.neumann_projection);
    c.max_steps = detail::get<long>(j, "max_steps", c.max_steps);
    if (j.contains("initial")) {
        const auto& ic = j.at("initial");
        detail::require_object(ic, "initial");
        detail::allow_keys(ic, "initial", {"family", "mass", "center", "width", "background", "snapshot"});
        c.initial.family = detail::get<std::string>(ic, "family", c.initial.family);
        c.initial.mass = detail::get<double>(ic, "mass", c.initial.mass);
        c.initial.width = detail::get<double>(ic, "width", c.initial.width);
        c.initial.background = detail::get<double>(ic, "background", c.initial.background);
        c.initial.snapshot = detail::get<std::string>(ic, "snapshot", c.initial.snapshot);
        if (ic.contains("center")) {
            const auto xy = detail::get<std::vector<double>>(ic, "center", {});
            if (xy.size() != 2) throw ConfigError("initial.center must be [x1, x2]");
            c.initial.center_x = xy[0];
            c.initial.center_y = xy[1];
        }
    }
    if (j.contains("solver")) {
        const auto& s = j.at("solver");
        detail::require_object(s, "solver");
        detail::allow_keys(s, "solver", {"tol", "max_iter"});
        c.solver_tol = detail::get<double>(s, "tol", c.solver_tol);
        c.solver_max_iter = detail::get<int>(s, "max_iter", c.solver_max_iter);
    }
    if (j.contains("mode")) {
        const auto& m = j.at("mode");
        detail::require_object(m, "mode");
        detail::allow_keys(m, "mode", {"chemotaxis", "diffusion"});
        c.chemotaxis = detail::get<bool>(m, "chemotaxis", c.chemotaxis);
        c.diffusion = detail::get<bool>(m, "diffusion", c.diffusion);
    }
    validate(c);
    return c;
}

// {"kind": "random_smooth", "count": 200, "seed": 7, "params": {...}, "scales": [...]}
inline FamilySpec parse_family_spec(const Json& j) {
    detail::require_object(j, "family spec");
    detail::allow_keys(j, "family spec", {"kind", "count", "seed", "params", "scales"});
    FamilySpec s;
    try {
        s.kind = parse_family_kind(detail::need<std::string>(j, "kind", "family spec"));
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    s.count = detail::get<int>(j, "count", s.count);
    s.seed = detail::get<std::uint64_t>(j, "seed", s.seed);
    s.params = detail::get<std::map<std::string, double>>(j, "params", {});
    s.scales = detail::get<std::vector<double>>(j, "scales", {});
    try {
        validate(s);
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    return s;
}

// Explicit constants, or {"fit": true, "combined_constant": C} to fit them from the trace.
struct OdeConstantsConfig {
    bool fit = false;
    std::optional<double> combined_constant;
    OdeConstants constants;
};

inline OdeConstantsConfig parse_ode_constants(const Json& j) {
    detail::require_object(j, "ODE constants");
    detail::allow_keys(j, "ODE constants", {"fit", "combined_constant", "a1", "a2", "a3", "a4", "a5", "p", "q", "r", "s"});
    OdeConstantsConfig c;
    c.fit = detail::get<bool>(j, "fit", false);
    if (j.contains("combined_constant")) c.combined_constant = detail::get<double>(j, "combined_constant", 0.0);
    auto& k = c.constants;
    if (!c.fit) {
        k.a1 = detail::need<double>(j, "a1", "ODE constants");
        k.a2 = detail::need<double>(j, "a2", "ODE constants");
        k.a3 = detail::need<double>(j, "a3", "ODE constants");
        k.a4 = detail::need<double>(j, "a4", "ODE constants");
        k.a5 = detail::need<double>(j, "a5", "ODE constants");
    }
    k.p = detail::get<double>(j, "p", k.p);
    k.q = detail::get<double>(j, "q", k.q);
    k.r = detail::get<double>(j, "r", k.r);
    k.s = detail::get<double>(j, "s", k.s);
    try {
        if (!c.fit) k.validate();
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    return c;
}

// Non-finite numbers have no JSON spelling; they become null and the caller
// reports the logarithm alongside.
inline Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json to_json(const OdeConstants& k) {
    return {{"a1", k.a1}, {"a2", k.a2}, {"a3", k.a3}, {"a4", k.a4}, {"a5", k.a5},
            {"p", k.p},   {"q", k.q},   {"r", k.r},   {"s", k.s}};
}

inline Json to_json(const OdeVerdict& v) {
    Json premises = Json::array(), margins = Json::array();
    for (const auto& p : v.premises) {
        premises.push_back(p.holds);
        margins.push_back(finite_or_null(p.margin));
    }
    return {{"premises", premises},
            {"margins", margins},
            {"A_star", v.bounds.A_star},
            {"B_star", finite_or_null(v.bounds.B_star)},
            {"log_B_star", v.bounds.log_B_star},
            {"C2", finite_or_null(v.bounds.C2)},
            {"log_C2", v.bounds.B_star},
            {"C3", finite_or_null(v.bounds.C3)},
            {"log_C3", v.bounds.A_star},
            {"a_conditions", v.bounds.a_conditions},
            {"sup_X", v.sup_X},
            {"log_bound", v.log_bound},
            {"conclusion", v.conclusion_holds},
            {"probative", v.probative}};
}

inline Json to_json(const GeometricConstants& g, const DomainSpec& d) {
    return {{"family", d.family}, {"h", d.height},   {"eps_star", d.eps_star}, {"K_star", g.K_star},
            {"R_star", g.R_star}, {"M_star", g.M_star}, {"area", g.area}};
}

}  // namespace pksipm
