#pragma once

// Run configuration, read from JSON (comments allowed). Every section and
// key is checked against a fixed list; unknown keys are errors.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kflow/errors.hpp"
#include "kflow/fiber_flow.hpp"
#include "kflow/geometry.hpp"

namespace kflow {

using json = nlohmann::json;

struct StencilConfig {
    cplx s0{0.0, 0.0};
    double delta = 0.01;
};

struct GridConfig {
    double h = 0.02;
    double eps_cut = 0.01;
    double bbox_padding = 2.0;  // in nodes
    std::optional<Bbox> bbox;
};

struct FlowConfig {
    double t_final = 1.0;
    std::vector<double> snapshots;  // filled with {0, T/4, T/2, T} when absent
    double c_cfl = 0.4;
    double dt_probe = 0.01;
    double dt = 0.0;  // 0: CFL-limited
};

struct DiagnosticsConfig {
    bool berman = true;
    bool relflow = true;
    bool ni = true;
    bool growth = true;
    bool ke = true;
    std::vector<double> ni_b{0.0, 1.0, 2.0};
    double interior_depth = 0.5;

    double berman_tol = 1e-2;
    double relflow_tol = 1e-2;
    double ke_tol = 2e-2;
    double growth_p_max = 2.2;
    double growth_diff_max = 1.2;
    double positivity_tol = 1e-10;
};

struct RunConfig {
    FamilySpec family;
    std::optional<StencilConfig> stencil;
    std::vector<cplx> base_points;
    GridConfig grid;
    FlowConfig flow;
    NewtonOptions newton;
    DiagnosticsConfig diagnostics;
    std::string output_dir = "kflow_out";
    bool resume = false;
    int workers = 1;
};

namespace detail {

inline void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError("'" + where + "' must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : obj.items()) {
        if (!ok.count(key)) {
            const std::string path = where.empty() ? key : where + "." + key;
            throw ConfigError("unknown key '" + path + "'");
        }
    }
}

inline double get_number(const json& obj, const char* key, const std::string& where, double fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number()) throw ConfigError("'" + where + "." + key + "' must be a number");
    return v.get<double>();
}

inline bool get_bool(const json& obj, const char* key, const std::string& where, bool fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_boolean()) throw ConfigError("'" + where + "." + key + "' must be true or false");
    return v.get<bool>();
}

inline cplx get_complex(const json& v, const std::string& where) {
    if (v.is_number()) return {v.get<double>(), 0.0};
    if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number())
        return {v[0].get<double>(), v[1].get<double>()};
    throw ConfigError("'" + where + "' must be a number or [re, im]");
}

inline void require_positive(double v, const std::string& name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("'" + name + "' must be positive");
}

inline std::pair<int, int> line_col(const std::string& text, std::size_t byte) {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

}  // namespace detail

inline FamilySpec family_from_json(const json& j) {
    detail::check_keys(j, "family", {"kind", "fiber_dim", "base_radius", "lambda", "coefficients"});
    FamilySpec spec;
    if (!j.contains("kind") || !j.at("kind").is_string()) throw ConfigError("'family.kind' is required");
    spec.kind = family_kind_from_string(j.at("kind").get<std::string>());
    spec.fiber_dim = static_cast<int>(detail::get_number(j, "fiber_dim", "family", 1));
    spec.base_radius = detail::get_number(j, "base_radius", "family", spec.base_radius);
    spec.lambda = detail::get_number(j, "lambda", "family", spec.lambda);
    if (j.contains("coefficients")) {
        const json& list = j.at("coefficients");
        if (!list.is_array()) throw ConfigError("'family.coefficients' must be a list");
        for (const json& rec : list) {
            detail::check_keys(rec, "family.coefficients[]", {"a", "b", "c", "d", "re", "im"});
            Monomial m;
            m.a = static_cast<int>(detail::get_number(rec, "a", "family.coefficients[]", 0));
            m.b = static_cast<int>(detail::get_number(rec, "b", "family.coefficients[]", 0));
            m.c = static_cast<int>(detail::get_number(rec, "c", "family.coefficients[]", 0));
            m.d = static_cast<int>(detail::get_number(rec, "d", "family.coefficients[]", 0));
            const cplx v{detail::get_number(rec, "re", "family.coefficients[]", 0.0),
                         detail::get_number(rec, "im", "family.coefficients[]", 0.0)};
            if (spec.coefficients.count(m)) throw ConfigError("duplicate polynomial coefficient " + to_string(m));
            spec.coefficients[m] = v;
        }
    }
    validate_family(spec);
    return spec;
}

inline json family_to_json(const FamilySpec& spec) {
    json j{{"kind", to_string(spec.kind)},
           {"fiber_dim", spec.fiber_dim},
           {"base_radius", spec.base_radius},
           {"lambda", spec.lambda}};
    if (!spec.coefficients.empty()) {
        json list = json::array();
        for (const auto& [m, v] : spec.coefficients)
            list.push_back({{"a", m.a}, {"b", m.b}, {"c", m.c}, {"d", m.d}, {"re", v.real()}, {"im", v.imag()}});
        j["coefficients"] = list;
    }
    return j;
}

/// Checks ranges and cross-field constraints; fills default snapshot times.
inline void validate(RunConfig& cfg) {
    validate_family(cfg.family);
    if (cfg.family.fiber_dim != 1) throw ConfigError("'family.fiber_dim': runs support fiber_dim = 1 only");
    if (!cfg.stencil && cfg.base_points.empty())
        throw ConfigError("either 'stencil' or 'base_points' must be given");
    if (cfg.stencil) detail::require_positive(cfg.stencil->delta, "stencil.delta");
    detail::require_positive(cfg.grid.h, "grid.h");
    detail::require_positive(cfg.grid.eps_cut, "grid.eps_cut");
    if (!(cfg.grid.bbox_padding >= 0.0)) throw ConfigError("'grid.bbox_padding' must be non-negative");
    if (cfg.grid.bbox) {
        const Bbox& b = *cfg.grid.bbox;
        if (!(b.xmax > b.xmin) || !(b.ymax > b.ymin)) throw ConfigError("'grid.bbox' must have xmax > xmin, ymax > ymin");
    } else if (cfg.family.kind == FamilyKind::polynomial) {
        throw ConfigError("'grid.bbox' is required for polynomial families");
    }
    detail::require_positive(cfg.flow.t_final, "t_final");
    detail::require_positive(cfg.flow.c_cfl, "flow.c_cfl");
    detail::require_positive(cfg.flow.dt_probe, "flow.dt_probe");
    if (cfg.flow.dt < 0.0) throw ConfigError("'flow.dt' must be positive (or 0 for the CFL step)");
    if (cfg.flow.snapshots.empty()) {
        const double T = cfg.flow.t_final;
        cfg.flow.snapshots = {0.0, T / 4.0, T / 2.0, T};
    }
    for (std::size_t i = 0; i < cfg.flow.snapshots.size(); ++i) {
        const double t = cfg.flow.snapshots[i];
        if (!(t >= 0.0) || t > cfg.flow.t_final)
            throw ConfigError("'flow.snapshots' must lie in [0, t_final]");
        if (i > 0 && !(t > cfg.flow.snapshots[i - 1]))
            throw ConfigError("'flow.snapshots' must be strictly ascending");
    }
    detail::require_positive(cfg.newton.tol, "newton.tol");
    if (cfg.newton.max_iter < 1) throw ConfigError("'newton.max_iter' must be positive");
    if (cfg.diagnostics.interior_depth < 0.0) throw ConfigError("'diagnostics.interior_depth' must be non-negative");
    for (double b : cfg.diagnostics.ni_b)
        if (!(b >= 0.0)) throw ConfigError("'diagnostics.ni_b' entries must be non-negative");
    for (cplx s : cfg.base_points)
        if (std::abs(s) > cfg.family.base_radius) throw ConfigError("'base_points' entry outside the base disc");
    if (cfg.stencil && std::abs(cfg.stencil->s0) + std::sqrt(2.0) * cfg.stencil->delta > cfg.family.base_radius)
        throw ConfigError("'stencil' points leave the base disc |s| <= base_radius");
    if (cfg.workers < 1) throw ConfigError("'workers' must be positive");
}

/// Parses and validates a configuration document.
inline RunConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        const auto [line, col] = detail::line_col(text, e.byte == 0 ? 0 : e.byte - 1);
        throw ConfigError("config parse error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                          ": " + e.what());
    }
    detail::check_keys(root, "", {"family", "stencil", "base_points", "grid", "flow", "newton", "diagnostics",
                                  "output", "workers"});
    RunConfig cfg;
    if (!root.contains("family")) throw ConfigError("'family' section is required");
    cfg.family = family_from_json(root.at("family"));

    if (root.contains("stencil")) {
        const json& j = root.at("stencil");
        detail::check_keys(j, "stencil", {"s0", "delta"});
        StencilConfig st;
        if (j.contains("s0")) st.s0 = detail::get_complex(j.at("s0"), "stencil.s0");
        st.delta = detail::get_number(j, "delta", "stencil", st.delta);
        cfg.stencil = st;
    }
    if (root.contains("base_points")) {
        const json& list = root.at("base_points");
        if (!list.is_array()) throw ConfigError("'base_points' must be a list");
        for (const json& p : list) cfg.base_points.push_back(detail::get_complex(p, "base_points[]"));
    }
    if (root.contains("grid")) {
        const json& j = root.at("grid");
        detail::check_keys(j, "grid", {"h", "eps_cut", "bbox_padding", "bbox"});
        cfg.grid.h = detail::get_number(j, "h", "grid", cfg.grid.h);
        cfg.grid.eps_cut = detail::get_number(j, "eps_cut", "grid", cfg.grid.eps_cut);
        cfg.grid.bbox_padding = detail::get_number(j, "bbox_padding", "grid", cfg.grid.bbox_padding);
        if (j.contains("bbox")) {
            const json& b = j.at("bbox");
            if (!b.is_array() || b.size() != 4) throw ConfigError("'grid.bbox' must be [xmin, xmax, ymin, ymax]");
            for (const json& v : b)
                if (!v.is_number()) throw ConfigError("'grid.bbox' entries must be numbers");
            cfg.grid.bbox = Bbox{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
        }
    }
    if (root.contains("flow")) {
        const json& j = root.at("flow");
        detail::check_keys(j, "flow", {"t_final", "snapshots", "c_cfl", "dt_probe", "dt"});
        cfg.flow.t_final = detail::get_number(j, "t_final", "flow", cfg.flow.t_final);
        if (j.contains("t_final") && !(cfg.flow.t_final > 0.0)) throw ConfigError("'t_final' must be positive");
        cfg.flow.c_cfl = detail::get_number(j, "c_cfl", "flow", cfg.flow.c_cfl);
        cfg.flow.dt_probe = detail::get_number(j, "dt_probe", "flow", cfg.flow.dt_probe);
        cfg.flow.dt = detail::get_number(j, "dt", "flow", cfg.flow.dt);
        if (j.contains("snapshots")) {
            const json& list = j.at("snapshots");
            if (!list.is_array()) throw ConfigError("'flow.snapshots' must be a list");
            for (const json& v : list) {
                if (!v.is_number()) throw ConfigError("'flow.snapshots' entries must be numbers");
                cfg.flow.snapshots.push_back(v.get<double>());
            }
        }
    }
    if (root.contains("newton")) {
        const json& j = root.at("newton");
        detail::check_keys(j, "newton", {"tol", "max_iter"});
        cfg.newton.tol = detail::get_number(j, "tol", "newton", cfg.newton.tol);
        cfg.newton.max_iter = static_cast<int>(detail::get_number(j, "max_iter", "newton", cfg.newton.max_iter));
    }
    if (root.contains("diagnostics")) {
        const json& j = root.at("diagnostics");
        detail::check_keys(j, "diagnostics",
                           {"berman", "relflow", "ni", "ni_b", "growth", "ke", "interior_depth", "berman_tol",
                            "relflow_tol", "ke_tol", "growth_p_max", "growth_diff_max", "positivity_tol"});
        DiagnosticsConfig& d = cfg.diagnostics;
        d.berman = detail::get_bool(j, "berman", "diagnostics", d.berman);
        d.relflow = detail::get_bool(j, "relflow", "diagnostics", d.relflow);
        d.ni = detail::get_bool(j, "ni", "diagnostics", d.ni);
        d.growth = detail::get_bool(j, "growth", "diagnostics", d.growth);
        d.ke = detail::get_bool(j, "ke", "diagnostics", d.ke);
        if (j.contains("ni_b")) {
            const json& list = j.at("ni_b");
            if (!list.is_array() || list.empty()) throw ConfigError("'diagnostics.ni_b' must be a non-empty list");
            d.ni_b.clear();
            for (const json& v : list) {
                if (!v.is_number()) throw ConfigError("'diagnostics.ni_b' entries must be numbers");
                d.ni_b.push_back(v.get<double>());
            }
        }
        d.interior_depth = detail::get_number(j, "interior_depth", "diagnostics", d.interior_depth);
        d.berman_tol = detail::get_number(j, "berman_tol", "diagnostics", d.berman_tol);
        d.relflow_tol = detail::get_number(j, "relflow_tol", "diagnostics", d.relflow_tol);
        d.ke_tol = detail::get_number(j, "ke_tol", "diagnostics", d.ke_tol);
        d.growth_p_max = detail::get_number(j, "growth_p_max", "diagnostics", d.growth_p_max);
        d.growth_diff_max = detail::get_number(j, "growth_diff_max", "diagnostics", d.growth_diff_max);
        d.positivity_tol = detail::get_number(j, "positivity_tol", "diagnostics", d.positivity_tol);
    }
    if (root.contains("output")) {
        const json& j = root.at("output");
        detail::check_keys(j, "output", {"dir", "resume"});
        if (j.contains("dir")) {
            if (!j.at("dir").is_string()) throw ConfigError("'output.dir' must be a string");
            cfg.output_dir = j.at("dir").get<std::string>();
        }
        cfg.resume = detail::get_bool(j, "resume", "output", cfg.resume);
    }
    if (root.contains("workers")) cfg.workers = static_cast<int>(detail::get_number(root, "workers", "", 1));
    validate(cfg);
    return cfg;
}

/// FNV-1a over the geometry that stored snapshots depend on.
inline std::uint64_t grid_hash(const RunConfig& cfg, const std::vector<GridLayout>& layouts) {
    json j{{"family", family_to_json(cfg.family)}, {"h", cfg.grid.h}, {"eps_cut", cfg.grid.eps_cut}};
    json boxes = json::array();
    for (const GridLayout& l : layouts) boxes.push_back({l.i0, l.j0, l.nx, l.ny});
    j["layouts"] = boxes;
    if (cfg.stencil) {
        j["delta"] = cfg.stencil->delta;
        j["s0"] = {cfg.stencil->s0.real(), cfg.stencil->s0.imag()};
    }
    json pts = json::array();
    for (cplx s : cfg.base_points) pts.push_back({s.real(), s.imag()});
    j["base_points"] = pts;
    std::uint64_t hash = 1469598103934665603ull;
    for (unsigned char ch : j.dump()) {
        hash ^= ch;
        hash *= 1099511628211ull;
    }
    return hash;
}

}  // namespace kflow
