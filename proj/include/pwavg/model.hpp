#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pwavg/expr.hpp"
#include "pwavg/linalg.hpp"
#include "pwavg/toml.hpp"

// The standard-form piecewise system, the periodic-solution manifold chart,
// and config ingestion.  A system is T-periodic in t with fixed switching
// times 0 = t_0 < t_1 < ... < t_n = T; zone j supplies the right-hand sides
// F_i^j for perturbation orders i = 0..k.

namespace pwavg::model {

using linalg::Vec;

struct AnalysisOptions {
    int order = 0;  // 0 = use system order k
    int grid = 64;
    std::vector<double> eps_list = {1e-2, 5e-3, 2.5e-3, 1.25e-3};
    double rel_tol = 1e-10;
    double abs_tol = 1e-12;
    double periodicity_tol = 1e-8;
    double degeneracy_floor = 1e-8;
    double zero_floor = 1e-7;          // max |f_i| below this declares f_i == 0 on V
    double newton_tol = 1e-6;
    double simple_zero_floor = 1e-6;   // |det Df_k| above this certifies simplicity
    double verify_tol = 1e-10;
    double eps_bound = 0.1;
    int hypothesis_samples = 20;
};

struct Zone {
    // rhs[i][c]: component c of the order-i field, over (t, x_1..x_m, params)
    std::vector<std::vector<expr::ExprPtr>> rhs;
    std::vector<expr::Compiled> rhs_compiled;  // flattened [i*m + c]

    // optional exact-in-eps field (the zone was given as rhs_full)
    std::vector<expr::ExprPtr> full;
    std::vector<expr::Compiled> full_compiled;

    // optional remainder R^j(t, x, eps), used only by full-system simulation
    std::vector<expr::ExprPtr> remainder;
    std::vector<expr::Compiled> remainder_compiled;

    bool has_full() const { return !full.empty(); }
    bool has_remainder() const { return !remainder.empty(); }
};

struct PiecewiseSystem {
    int m = 0;                        // state dimension
    double period = 0.0;              // T
    int order = 1;                    // k
    std::vector<double> switch_times; // 0 = t_0 < ... < t_n = T (n+1 entries)
    std::vector<Zone> zones;
    std::map<std::string, double> params;

    expr::VarTable vars;  // slot 0: t, 1..m: x_1..x_m, m+1: eps, m+2..: params

    int zone_count() const { return static_cast<int>(zones.size()); }
    int t_slot() const { return 0; }
    int x_slot(int c) const { return 1 + c; }
    int eps_slot() const { return m + 1; }

    // Evaluation environment with parameter slots filled in.
    std::vector<double> make_env() const {
        std::vector<double> env(static_cast<std::size_t>(vars.size()), 0.0);
        int s = m + 2;
        for (const auto& [name, value] : params) env[static_cast<std::size_t>(s++)] = value;
        return env;
    }

    // Zone lookup with time reduced mod T; zones are half-open [t_{j-1}, t_j)
    // with the final zone closed at T.
    int zone_index(double t) const {
        double tau = std::fmod(t, period);
        if (tau < 0.0) tau += period;
        for (std::size_t j = 1; j + 1 < switch_times.size(); ++j)
            if (tau < switch_times[j]) return static_cast<int>(j) - 1;
        return zone_count() - 1;
    }
};

struct ManifoldChart {
    int d = 0;                          // manifold dimension, 1 <= d <= m
    std::vector<expr::ExprPtr> beta;    // m-d components over (alpha_1..alpha_d, params)
    std::vector<expr::Compiled> beta_compiled;
    Vec lower, upper;                   // box V in R^d

    expr::VarTable vars;  // slot 0..d-1: alpha_i, then params
    std::map<std::string, double> params;

    std::vector<double> make_env() const {
        std::vector<double> env(static_cast<std::size_t>(vars.size()), 0.0);
        int s = d;
        for (const auto& [name, value] : params) env[static_cast<std::size_t>(s++)] = value;
        return env;
    }

    bool in_box(std::span<const double> alpha, double margin = 0.0) const {
        for (int i = 0; i < d; ++i)
            if (alpha[i] < lower[i] - margin || alpha[i] > upper[i] + margin) return false;
        return true;
    }

    // z_alpha = (alpha, beta(alpha))
    Vec point(std::span<const double> alpha, int m) const {
        Vec z(static_cast<std::size_t>(m));
        std::vector<double> env = make_env();
        for (int i = 0; i < d; ++i) {
            env[static_cast<std::size_t>(i)] = alpha[i];
            z[static_cast<std::size_t>(i)] = alpha[i];
        }
        for (std::size_t c = 0; c < beta_compiled.size(); ++c)
            z[static_cast<std::size_t>(d) + c] = beta_compiled[c].eval(env);
        return z;
    }
};

struct LoadedModel {
    PiecewiseSystem system;
    ManifoldChart chart;
    AnalysisOptions options;
};

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

namespace detail {

inline double require_number(const toml::Table& t, const std::string& key, const std::string& path) {
    const toml::Value* v = t.find(key);
    if (!v) throw ConfigError("missing required key '" + key + "'", path);
    if (!v->is_number()) throw ConfigError("'" + key + "' must be a number", path);
    return v->as_number();
}

inline int require_int(const toml::Table& t, const std::string& key, const std::string& path) {
    const toml::Value* v = t.find(key);
    if (!v) throw ConfigError("missing required key '" + key + "'", path);
    if (!v->is_number() || !v->is_integer)
        throw ConfigError("'" + key + "' must be an integer", path);
    return static_cast<int>(v->as_number());
}

inline std::vector<double> number_array(const toml::Value& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError("expected an array of numbers", path);
    std::vector<double> out;
    for (const toml::Value& item : v.as_array()) {
        if (!item.is_number()) throw ConfigError("expected an array of numbers", path);
        out.push_back(item.as_number());
    }
    return out;
}

inline std::vector<std::string> string_array(const toml::Value& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError("expected an array of strings", path);
    std::vector<std::string> out;
    for (const toml::Value& item : v.as_array()) {
        if (!item.is_string()) throw ConfigError("expected an array of strings", path);
        out.push_back(item.as_string());
    }
    return out;
}

inline void reject_unknown_keys(const toml::Table& t, const std::set<std::string>& allowed,
                                const std::string& path) {
    for (const auto& [key, value] : t.kv)
        if (!allowed.count(key))
            throw ConfigError("unknown key '" + key + "'", path);
}

inline std::vector<expr::ExprPtr> parse_components(const std::vector<std::string>& srcs,
                                                   const expr::VarTable& vars, int expected,
                                                   const std::string& path) {
    if (static_cast<int>(srcs.size()) != expected)
        throw ConfigError("expected " + std::to_string(expected) + " expression(s), got " +
                              std::to_string(srcs.size()),
                          path);
    std::vector<expr::ExprPtr> out;
    for (std::size_t c = 0; c < srcs.size(); ++c) {
        try {
            out.push_back(expr::parse_expression(srcs[c], vars));
        } catch (const ParseError& err) {
            throw ConfigError(std::string("bad expression: ") + err.what(),
                              path + "[" + std::to_string(c) + "]");
        }
    }
    return out;
}

inline std::vector<expr::Compiled> compile_all(const std::vector<expr::ExprPtr>& es) {
    std::vector<expr::Compiled> out;
    out.reserve(es.size());
    for (const auto& e : es) out.emplace_back(e);
    return out;
}

}  // namespace detail

inline LoadedModel load_system(const std::string& config_text) {
    using detail::require_int;
    using detail::require_number;

    toml::Document doc = toml::parse(config_text);

    for (const auto& [name, table] : doc.tables)
        if (name != "system" && name != "system.params" && name != "manifold" && name != "analysis")
            throw ConfigError("unknown table [" + name + "]", name);
    for (const auto& [name, tables] : doc.table_arrays)
        if (name != "zone") throw ConfigError("unknown table array [[" + name + "]]", name);

    const toml::Table* system_tbl = doc.find_table("system");
    if (!system_tbl) throw ConfigError("missing [system] table", "system");
    detail::reject_unknown_keys(*system_tbl, {"m", "T", "k", "switch_times"}, "system");

    LoadedModel lm;
    PiecewiseSystem& sys = lm.system;
    sys.m = require_int(*system_tbl, "m", "system.m");
    if (sys.m < 1) throw ConfigError("m must be >= 1", "system.m");
    sys.period = require_number(*system_tbl, "T", "system.T");
    if (!(sys.period > 0.0)) throw ConfigError("T must be positive", "system.T");
    sys.order = require_int(*system_tbl, "k", "system.k");
    if (sys.order < 1 || sys.order > 6)
        throw ConfigError("k must be between 1 and 6", "system.k");

    const toml::Value* st = system_tbl->find("switch_times");
    if (!st) throw ConfigError("missing required key 'switch_times'", "system");
    sys.switch_times = detail::number_array(*st, "system.switch_times");
    if (sys.switch_times.size() < 2)
        throw ConfigError("switch_times needs at least [0, T]", "system.switch_times");
    if (sys.switch_times.front() != 0.0)
        throw ConfigError("switch_times must start at 0", "system.switch_times");
    if (sys.switch_times.back() != sys.period)
        throw ConfigError("switch_times must end exactly at T", "system.switch_times");
    for (std::size_t j = 1; j < sys.switch_times.size(); ++j)
        if (!(sys.switch_times[j] > sys.switch_times[j - 1]))
            throw ConfigError("switch_times must be strictly increasing", "system.switch_times");

    if (const toml::Table* params_tbl = doc.find_table("system.params"))
        for (const auto& [key, value] : params_tbl->kv) {
            if (!value.is_number())
                throw ConfigError("parameter must be a number", "system.params." + key);
            sys.params[key] = value.as_number();
        }

    // variable table: t, x_1..x_m, eps, params (map order = sorted by name)
    sys.vars.add("t");
    for (int c = 1; c <= sys.m; ++c) sys.vars.add("x_" + std::to_string(c));
    sys.vars.add("eps");
    for (const auto& [name, value] : sys.params) {
        if (sys.vars.find(name) >= 0)
            throw ConfigError("parameter name collides with a built-in variable",
                              "system.params." + name);
        sys.vars.add(name);
    }

    // zones
    auto zones_it = doc.table_arrays.find("zone");
    const int n = static_cast<int>(sys.switch_times.size()) - 1;
    if (zones_it == doc.table_arrays.end() || static_cast<int>(zones_it->second.size()) != n)
        throw ConfigError("expected " + std::to_string(n) + " [[zone]] tables",
                          "zone");

    expr::VarTable no_eps_vars;  // same slots as sys.vars, eps renamed away
    for (int i = 0; i < sys.vars.size(); ++i)
        no_eps_vars.add(i == sys.eps_slot() ? "__eps_unavailable" : sys.vars.name(i));

    for (int j = 0; j < n; ++j) {
        const toml::Table& zt = zones_it->second[static_cast<std::size_t>(j)];
        const std::string zpath = "zone[" + std::to_string(j) + "]";
        Zone zone;

        std::set<std::string> allowed = {"rhs_full", "expand_to", "remainder"};
        for (int i = 0; i <= sys.order; ++i) allowed.insert("rhs_order_" + std::to_string(i));
        detail::reject_unknown_keys(zt, allowed, zpath);

        const bool has_full = zt.has("rhs_full");
        const bool has_orders = zt.has("rhs_order_0");
        if (has_full == has_orders)
            throw ConfigError("zone needs either rhs_full or rhs_order_0..k", zpath);

        if (has_full) {
            int expand_to = require_int(zt, "expand_to", zpath + ".expand_to");
            if (expand_to != sys.order)
                throw ConfigError("expand_to must equal system order k", zpath + ".expand_to");
            zone.full = detail::parse_components(
                detail::string_array(*zt.find("rhs_full"), zpath + ".rhs_full"), sys.vars, sys.m,
                zpath + ".rhs_full");
            zone.rhs.resize(static_cast<std::size_t>(sys.order) + 1);
            for (int c = 0; c < sys.m; ++c) {
                std::vector<expr::ExprPtr> coeffs;
                try {
                    coeffs = expr::epsilon_series(zone.full[static_cast<std::size_t>(c)],
                                                  sys.order, sys.eps_slot());
                } catch (const Error& err) {
                    throw ConfigError(std::string("eps-expansion failed: ") + err.what(),
                                      zpath + ".rhs_full[" + std::to_string(c) + "]");
                }
                for (int i = 0; i <= sys.order; ++i)
                    zone.rhs[static_cast<std::size_t>(i)].push_back(coeffs[static_cast<std::size_t>(i)]);
            }
        } else {
            for (int i = 0; i <= sys.order; ++i) {
                const std::string key = "rhs_order_" + std::to_string(i);
                const toml::Value* v = zt.find(key);
                if (!v) throw ConfigError("missing '" + key + "'", zpath);
                zone.rhs.push_back(detail::parse_components(
                    detail::string_array(*v, zpath + "." + key), no_eps_vars, sys.m,
                    zpath + "." + key));
            }
        }

        if (zt.has("remainder"))
            zone.remainder = detail::parse_components(
                detail::string_array(*zt.find("remainder"), zpath + ".remainder"), sys.vars,
                sys.m, zpath + ".remainder");

        // the fields get differentiated in state; abs has no derivative at 0
        for (const auto& order_rhs : zone.rhs)
            for (std::size_t c = 0; c < order_rhs.size(); ++c)
                if (expr::contains_unary(order_rhs[c], expr::UnaryOp::Abs))
                    throw ConfigError("abs is not allowed in zone fields (not differentiable)",
                                      zpath);

        for (const auto& order_rhs : zone.rhs)
            for (const auto& e : order_rhs) zone.rhs_compiled.emplace_back(e);
        zone.full_compiled = detail::compile_all(zone.full);
        zone.remainder_compiled = detail::compile_all(zone.remainder);
        sys.zones.push_back(std::move(zone));
    }

    // manifold
    const toml::Table* manifold_tbl = doc.find_table("manifold");
    if (!manifold_tbl) throw ConfigError("missing [manifold] table", "manifold");
    detail::reject_unknown_keys(*manifold_tbl, {"d", "beta", "v_lower", "v_upper"}, "manifold");

    ManifoldChart& chart = lm.chart;
    chart.d = require_int(*manifold_tbl, "d", "manifold.d");
    if (chart.d < 1 || chart.d > sys.m)
        throw ConfigError("d must satisfy 1 <= d <= m", "manifold.d");
    chart.params = sys.params;
    for (int i = 1; i <= chart.d; ++i) chart.vars.add("alpha_" + std::to_string(i));
    for (const auto& [name, value] : chart.params) chart.vars.add(name);

    {
        const toml::Value* bv = manifold_tbl->find("beta");
        std::vector<std::string> beta_srcs;
        if (bv) beta_srcs = detail::string_array(*bv, "manifold.beta");
        if (!bv && chart.d != sys.m)
            throw ConfigError("missing required key 'beta'", "manifold");
        chart.beta = detail::parse_components(beta_srcs, chart.vars, sys.m - chart.d,
                                              "manifold.beta");
        chart.beta_compiled = detail::compile_all(chart.beta);
    }

    const toml::Value* lo = manifold_tbl->find("v_lower");
    const toml::Value* hi = manifold_tbl->find("v_upper");
    if (!lo || !hi) throw ConfigError("missing v_lower/v_upper", "manifold");
    chart.lower = detail::number_array(*lo, "manifold.v_lower");
    chart.upper = detail::number_array(*hi, "manifold.v_upper");
    if (static_cast<int>(chart.lower.size()) != chart.d ||
        static_cast<int>(chart.upper.size()) != chart.d)
        throw ConfigError("v_lower/v_upper must have d entries", "manifold");
    for (int i = 0; i < chart.d; ++i)
        if (!(chart.lower[i] < chart.upper[i]))
            throw ConfigError("v_lower must be strictly below v_upper", "manifold");

    // beta must be finite on the closure of V (coarse sample)
    {
        const int probes = 5;
        std::vector<double> alpha(static_cast<std::size_t>(chart.d));
        std::vector<int> idx(static_cast<std::size_t>(chart.d), 0);
        while (true) {
            for (int i = 0; i < chart.d; ++i)
                alpha[static_cast<std::size_t>(i)] =
                    chart.lower[i] + (chart.upper[i] - chart.lower[i]) * idx[i] / (probes - 1);
            try {
                Vec z = chart.point(alpha, sys.m);
                for (double c : z)
                    if (!std::isfinite(c))
                        throw ConfigError("beta is not finite on the closure of V",
                                          "manifold.beta");
            } catch (const EvalError& err) {
                throw ConfigError(std::string("beta evaluation failed on V: ") + err.what(),
                                  "manifold.beta");
            }
            int i = 0;
            for (; i < chart.d; ++i) {
                if (++idx[static_cast<std::size_t>(i)] < probes) break;
                idx[static_cast<std::size_t>(i)] = 0;
            }
            if (i == chart.d) break;
        }
    }

    // analysis
    AnalysisOptions& opt = lm.options;
    if (const toml::Table* at = doc.find_table("analysis")) {
        detail::reject_unknown_keys(
            *at,
            {"order", "grid", "eps_list", "rel_tol", "abs_tol", "periodicity_tol",
             "degeneracy_floor", "zero_floor", "newton_tol", "simple_zero_floor", "verify_tol",
             "eps_bound", "hypothesis_samples"},
            "analysis");
        auto num = [&](const char* key, double& out) {
            if (const toml::Value* v = at->find(key)) out = v->as_number();
        };
        auto integer = [&](const char* key, int& out) {
            if (at->has(key)) out = require_int(*at, key, std::string("analysis.") + key);
        };
        integer("order", opt.order);
        integer("grid", opt.grid);
        integer("hypothesis_samples", opt.hypothesis_samples);
        if (const toml::Value* v = at->find("eps_list"))
            opt.eps_list = detail::number_array(*v, "analysis.eps_list");
        num("rel_tol", opt.rel_tol);
        num("abs_tol", opt.abs_tol);
        num("periodicity_tol", opt.periodicity_tol);
        num("degeneracy_floor", opt.degeneracy_floor);
        num("zero_floor", opt.zero_floor);
        num("newton_tol", opt.newton_tol);
        num("simple_zero_floor", opt.simple_zero_floor);
        num("verify_tol", opt.verify_tol);
        num("eps_bound", opt.eps_bound);
    }
    if (opt.order == 0) opt.order = sys.order;
    if (opt.order < 1 || opt.order > sys.order)
        throw ConfigError("analysis order must be in 1..k", "analysis.order");
    if (opt.grid < 2) throw ConfigError("grid must be >= 2", "analysis.grid");

    return lm;
}

// ---------------------------------------------------------------------------
// Serialization (round-trip support)
// ---------------------------------------------------------------------------

inline std::string serialize(const LoadedModel& lm) {
    const PiecewiseSystem& sys = lm.system;
    std::string out;
    auto num = [](double v) { return expr::detail::format_double(v); };

    out += "[system]\n";
    out += "m = " + std::to_string(sys.m) + "\n";
    out += "T = " + num(sys.period) + "\n";
    out += "k = " + std::to_string(sys.order) + "\n";
    out += "switch_times = [";
    for (std::size_t j = 0; j < sys.switch_times.size(); ++j) {
        if (j) out += ", ";
        out += num(sys.switch_times[j]);
    }
    out += "]\n";
    if (!sys.params.empty()) {
        out += "\n[system.params]\n";
        for (const auto& [name, value] : sys.params) out += name + " = " + num(value) + "\n";
    }
    for (const Zone& zone : sys.zones) {
        out += "\n[[zone]]\n";
        auto emit = [&](const std::string& key, const std::vector<expr::ExprPtr>& es) {
            out += key + " = [";
            for (std::size_t c = 0; c < es.size(); ++c) {
                if (c) out += ", ";
                out += '"' + expr::to_string(es[c]) + '"';
            }
            out += "]\n";
        };
        if (zone.has_full()) {
            emit("rhs_full", zone.full);
            out += "expand_to = " + std::to_string(sys.order) + "\n";
        } else {
            for (std::size_t i = 0; i < zone.rhs.size(); ++i)
                emit("rhs_order_" + std::to_string(i), zone.rhs[i]);
        }
        if (zone.has_remainder()) emit("remainder", zone.remainder);
    }

    const ManifoldChart& chart = lm.chart;
    out += "\n[manifold]\n";
    out += "d = " + std::to_string(chart.d) + "\n";
    out += "beta = [";
    for (std::size_t c = 0; c < chart.beta.size(); ++c) {
        if (c) out += ", ";
        out += '"' + expr::to_string(chart.beta[c]) + '"';
    }
    out += "]\n";
    auto vecline = [&](const char* key, const Vec& v) {
        out += std::string(key) + " = [";
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out += ", ";
            out += num(v[i]);
        }
        out += "]\n";
    };
    vecline("v_lower", chart.lower);
    vecline("v_upper", chart.upper);

    const AnalysisOptions& opt = lm.options;
    out += "\n[analysis]\n";
    out += "order = " + std::to_string(opt.order) + "\n";
    out += "grid = " + std::to_string(opt.grid) + "\n";
    out += "eps_list = [";
    for (std::size_t i = 0; i < opt.eps_list.size(); ++i) {
        if (i) out += ", ";
        out += num(opt.eps_list[i]);
    }
    out += "]\n";
    out += "rel_tol = " + num(opt.rel_tol) + "\n";
    out += "abs_tol = " + num(opt.abs_tol) + "\n";
    out += "periodicity_tol = " + num(opt.periodicity_tol) + "\n";
    out += "degeneracy_floor = " + num(opt.degeneracy_floor) + "\n";
    out += "zero_floor = " + num(opt.zero_floor) + "\n";
    out += "newton_tol = " + num(opt.newton_tol) + "\n";
    out += "simple_zero_floor = " + num(opt.simple_zero_floor) + "\n";
    out += "verify_tol = " + num(opt.verify_tol) + "\n";
    out += "eps_bound = " + num(opt.eps_bound) + "\n";
    out += "hypothesis_samples = " + std::to_string(opt.hypothesis_samples) + "\n";
    return out;
}

}  // namespace pwavg::model
