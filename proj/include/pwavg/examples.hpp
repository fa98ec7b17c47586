#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "pwavg/expr.hpp"
#include "pwavg/errors.hpp"

// Bundled example systems with closed-form oracles for their bifurcation
// functions, plus the special functions and the cubic root classification the
// oracles need.  Configs are generated from expression trees so that derived
// quantities (like the rotated field g = f + x f_y - y f_x) have one source
// of truth.

namespace pwavg::examples {

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

namespace detail {

// Ascending series with compensated (Kahan) summation.  Accurate for the
// moderate arguments used here; the domain is capped at 50.
inline double bessel_series(double x, int nu) {
    if (x < 0.0 || x > 50.0)
        throw PreconditionError("bessel: argument must lie in [0, 50]");
    const double half = 0.5 * x;
    double term = 1.0;
    for (int j = 1; j <= nu; ++j) term *= half / j;  // (x/2)^nu / nu!
    double sum = 0.0, comp = 0.0;
    for (int s = 0; s < 400; ++s) {
        double y = term - comp;
        double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        term *= -(half * half) / (static_cast<double>(s + 1) * (s + 1 + nu));
        if (std::abs(term) < 1e-16 * (1.0 + std::abs(sum))) break;
    }
    return sum;
}

// force > 0 keeps subdividing regardless of the error estimate; symmetric
// integrands can fool the first few refinement comparisons.
inline double adaptive_simpson_rec(const std::function<double(double)>& f, double a, double b,
                                   double fa, double fm, double fb, double whole, double tol,
                                   int depth, int force) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || (force <= 0 && std::abs(left + right - whole) < 15.0 * tol))
        return left + right + (left + right - whole) / 15.0;
    return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, force - 1) +
           adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, force - 1);
}

}  // namespace detail

inline double bessel_j0(double x) { return detail::bessel_series(x, 0); }
inline double bessel_j1(double x) { return detail::bessel_series(x, 1); }

inline double adaptive_quadrature(const std::function<double(double)>& f, double a, double b,
                                  double tol = 1e-10) {
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return detail::adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, 30, 5);
}

// ---------------------------------------------------------------------------
// Closed-form / quadrature oracles
// ---------------------------------------------------------------------------

// First-order bifurcation function of the invariant-surface example:
//   f_1(r) = a1 int_0^pi f(r cos p, r sin p) cos p dp
//          + b1 int_pi^2pi f(r cos p, r sin p) sin p dp
inline double oracle_f1_surface(double r, const std::function<double(double, double)>& f,
                                double a1, double b1) {
    if (!(r > 0.0)) throw PreconditionError("oracle_f1_surface: r must be positive");
    const double pi = std::numbers::pi;
    double ia = adaptive_quadrature(
        [&](double p) { return f(r * std::cos(p), r * std::sin(p)) * std::cos(p); }, 0.0, pi);
    double ib = adaptive_quadrature(
        [&](double p) { return f(r * std::cos(p), r * std::sin(p)) * std::sin(p); }, pi, 2.0 * pi);
    return a1 * ia + b1 * ib;
}

// Closed forms of the same for f = cos x and f = sin x.
inline double oracle_f1_surface_cos(double r, double b1) {
    return -2.0 * b1 * std::sin(r) / r;
}
inline double oracle_f1_surface_sin(double r, double a1) {
    return a1 * std::numbers::pi * bessel_j1(r);
}

// Second-order bifurcation polynomial of the invariant-surface example with
// f = 2x^2 - y^2 (a cubic in r; the linear and cubic coefficients are fixed
// transcendental combinations of the perturbation parameters).
struct SurfaceQuadCubic {
    double c0 = 0.0, c1 = 0.0, c3 = 0.0;

    double operator()(double r) const { return c0 + r * (c1 + c3 * r * r); }
};

inline SurfaceQuadCubic oracle_f2_cubic_coefficients(double a0, double a1, double b1, double b2) {
    const double pi = std::numbers::pi;
    const double epi = std::exp(pi);
    SurfaceQuadCubic c;
    c.c0 = -2.0 * b2;
    c.c1 = a0 * ((epi * (1.0 - pi) + 1.0 + pi) * a1 - (1.0 + epi) * b1) / (epi - 1.0);
    c.c3 = ((epi * (56.0 - 50.0 * pi) + 56.0 + 50.0 * pi) * a1 * a1 -
            60.0 * (1.0 + epi) * a1 * b1 +
            (epi * (4.0 - 5.0 * pi) + 4.0 + 5.0 * pi) * b1 * b1) /
           (40.0 * (epi - 1.0));
    return c;
}

inline double oracle_f2_cubic(double r, double a0, double a1, double b1, double b2) {
    if (!(r > 0.0)) throw PreconditionError("oracle_f2_cubic: r must be positive");
    return oracle_f2_cubic_coefficients(a0, a1, b1, b2)(r);
}

// First-order bifurcation function of the four-zone center example:
//   f_1(a) = (1/2) a (a (a1+a2+a3+a4) + 2 (b1-b2-b3+b4))
inline double oracle_f1_fourzone(double alpha, const double a[4], const double b[4]) {
    if (!(alpha > 0.0)) throw PreconditionError("oracle_f1_fourzone: alpha must be positive");
    return 0.5 * alpha * (alpha * (a[0] + a[1] + a[2] + a[3]) + 2.0 * (b[0] - b[1] - b[2] + b[3]));
}

// ---------------------------------------------------------------------------
// Normalized cubic r^3 + A1 r + A0: discriminant classification
// ---------------------------------------------------------------------------

// Coefficients (A0, A1) of the normalized second-order cubic of the
// f = 2x^2 - y^2 case, as functions of the perturbation parameters.
struct NormalizedCubic {
    double a0_coeff = 0.0;  // A_0
    double a1_coeff = 0.0;  // A_1
};

inline NormalizedCubic normalized_cubic_coefficients(double a0, double a1, double b1, double b2) {
    const double pi = std::numbers::pi;
    const double epi = std::exp(pi);
    const double denom = (1.0 + epi) * 4.0 * (15.0 * a1 * b1 - b1 * b1 - 14.0 * a1 * a1) -
                         5.0 * pi * (1.0 - epi) * (b1 * b1 + 10.0 * a1 * a1);
    NormalizedCubic n;
    n.a0_coeff = -80.0 * b2 * (1.0 - epi) / denom;
    n.a1_coeff = 40.0 * a0 * ((1.0 + epi) * (b1 - a1) - a1 * pi * (1.0 - epi)) / denom;
    return n;
}

struct CubicClassification {
    double discriminant = 0.0;        // D = -4 A1^3 - 27 A0^2
    int positive_root_lower_bound = 0;
};

inline CubicClassification cubic_root_classification(double A0, double A1) {
    CubicClassification c;
    c.discriminant = -4.0 * A1 * A1 * A1 - 27.0 * A0 * A0;
    if (c.discriminant > 0.0) {
        c.positive_root_lower_bound = (A1 < 0.0 && A0 > 0.0) ? 2 : 1;
    } else if (A0 < 0.0) {
        c.positive_root_lower_bound = 1;
    }
    return c;
}

// Real roots of r^3 + A1 r + A0.
inline std::vector<double> solve_depressed_cubic(double A0, double A1) {
    const double p = A1, q = A0;
    const double disc = -4.0 * p * p * p - 27.0 * q * q;
    std::vector<double> roots;
    if (p == 0.0 && q == 0.0) {
        roots.push_back(0.0);
    } else if (disc > 0.0) {
        // three distinct real roots (p < 0 here)
        const double m = 2.0 * std::sqrt(-p / 3.0);
        const double arg = std::clamp(3.0 * q / (p * m), -1.0, 1.0);
        const double theta = std::acos(arg) / 3.0;
        for (int k = 0; k < 3; ++k)
            roots.push_back(m * std::cos(theta - 2.0 * std::numbers::pi * k / 3.0));
    } else if (disc < 0.0) {
        const double half_q = -0.5 * q;
        const double s = std::sqrt(0.25 * q * q + p * p * p / 27.0);
        roots.push_back(std::cbrt(half_q + s) + std::cbrt(half_q - s));
    } else {
        if (p == 0.0) {
            roots.push_back(std::cbrt(-q));
        } else {
            roots.push_back(3.0 * q / p);        // simple
            roots.push_back(-3.0 * q / (2.0 * p));  // double
        }
    }
    return roots;
}

// ---------------------------------------------------------------------------
// Config generation
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v) { return expr::detail::format_double(v); }

inline std::string params_block(const std::map<std::string, double>& params) {
    std::string out = "[system.params]\n";
    for (const auto& [name, value] : params) out += name + " = " + fmt(value) + "\n";
    return out;
}

}  // namespace detail

// Config for the 3D invariant-surface example reduced to cylindrical standard
// form (state x_1 = r, x_2 = z, angular time t over [0, 2pi], two zones).
// The surface function f is supplied as an expression in (x, y); the rotated
// field g = f + x f_y - y f_x and the chart beta(a) = f(a, 0) are derived
// symbolically.
inline std::string make_surface_config(const std::string& f_src, int k,
                                       const std::map<std::string, double>& params,
                                       double v_lower, double v_upper,
                                       const std::string& analysis_extra = "") {
    using namespace pwavg::expr;
    VarTable fxy({"x", "y"});
    ExprPtr f = parse_expression(f_src, fxy);
    ExprPtr g = add(f, sub(mul(variable("x", 0), differentiate(f, 1)),
                           mul(variable("y", 1), differentiate(f, 0))));

    // system table: t, x_1, x_2 (slots 0..2)
    ExprPtr t_var = variable("t", 0);
    ExprPtr r_var = variable("x_1", 1);
    ExprPtr x_sub = mul(r_var, unary(UnaryOp::Cos, t_var));
    ExprPtr y_sub = mul(r_var, unary(UnaryOp::Sin, t_var));
    ExprPtr g_cyl = substitute_many(g, {{0, x_sub}, {1, y_sub}});

    // chart table: alpha_1 (slot 0)
    ExprPtr beta = substitute_many(f, {{0, variable("alpha_1", 0)}, {1, number(0.0)}});

    const std::string G = to_string(g_cyl);
    const std::string A = "(a0 + a1*x_2) + eps*(a2 + a3*x_2)";
    const std::string B = "b1*x_2 + eps*(b2 + b3*x_2)";
    const std::string den1 = "1 - eps*(" + A + ")*sin(t)/x_1";
    const std::string den2 = "1 + eps*(" + B + ")*cos(t)/x_1";

    std::map<std::string, double> p = params;
    for (const char* name : {"a0", "a1", "a2", "a3", "b1", "b2", "b3"})
        p.emplace(name, 0.0);

    std::string cfg;
    cfg += "[system]\n";
    cfg += "m = 2\n";
    cfg += "T = " + detail::fmt(2.0 * std::numbers::pi) + "\n";
    cfg += "k = " + std::to_string(k) + "\n";
    cfg += "switch_times = [0, " + detail::fmt(std::numbers::pi) + ", " +
           detail::fmt(2.0 * std::numbers::pi) + "]\n\n";
    cfg += detail::params_block(p) + "\n";
    cfg += "[[zone]]\n";
    cfg += "rhs_full = [\"eps*(" + A + ")*cos(t)/(" + den1 + ")\", \"(" + G + " - x_2)/(" +
           den1 + ")\"]\n";
    cfg += "expand_to = " + std::to_string(k) + "\n\n";
    cfg += "[[zone]]\n";
    cfg += "rhs_full = [\"eps*(" + B + ")*sin(t)/(" + den2 + ")\", \"(" + G + " - x_2)/(" +
           den2 + ")\"]\n";
    cfg += "expand_to = " + std::to_string(k) + "\n\n";
    cfg += "[manifold]\n";
    cfg += "d = 1\n";
    cfg += "beta = [\"" + to_string(beta) + "\"]\n";
    cfg += "v_lower = [" + detail::fmt(v_lower) + "]\n";
    cfg += "v_upper = [" + detail::fmt(v_upper) + "]\n";
    if (!analysis_extra.empty()) cfg += "\n[analysis]\n" + analysis_extra;
    return cfg;
}

// Config for the four-zone piecewise-constant center example (state x_1 = r,
// x_2 = w, angular time over [0, 2pi], zones split at pi/2, pi, 3pi/2).
inline std::string make_fourzone_config(const std::map<std::string, double>& params,
                                        double v_lower, double v_upper,
                                        const std::string& analysis_extra = "") {
    static const char* g_str[4] = {"(sin(t) - cos(t))", "(-(sin(t) + cos(t)))",
                                   "(cos(t) - sin(t))", "(sin(t) + cos(t))"};
    static const char* gh_str[4] = {"(sin(t) + cos(t))", "(sin(t) - cos(t))",
                                    "(-(sin(t) + cos(t)))", "(cos(t) - sin(t))"};
    std::map<std::string, double> p = params;
    for (int j = 1; j <= 4; ++j)
        for (const char* base : {"a", "b", "c", "d"})
            p.emplace(std::string(base) + std::to_string(j), 0.0);

    const double pi = std::numbers::pi;
    std::string cfg;
    cfg += "[system]\n";
    cfg += "m = 2\n";
    cfg += "T = " + detail::fmt(2.0 * pi) + "\n";
    cfg += "k = 1\n";
    cfg += "switch_times = [0, " + detail::fmt(pi / 2.0) + ", " + detail::fmt(pi) + ", " +
           detail::fmt(1.5 * pi) + ", " + detail::fmt(2.0 * pi) + "]\n\n";
    cfg += detail::params_block(p) + "\n";
    for (int j = 0; j < 4; ++j) {
        const std::string sj = std::to_string(j + 1);
        const std::string den =
            std::string(gh_str[j]) + " - eps*(a" + sj + "*x_1*cos(t)*sin(t) + b" + sj + "*sin(t))";
        cfg += "[[zone]]\n";
        cfg += "rhs_full = [\"x_1*(" + std::string(g_str[j]) + " + eps*(a" + sj +
               "*x_1*cos(t)^2 + b" + sj + "*cos(t)))/(" + den + ")\", ";
        cfg += "\"x_1*(-x_2 + eps*(c" + sj + "*x_1*cos(t) + d" + sj + "))/(" + den + ")\"]\n";
        cfg += "expand_to = 1\n\n";
    }
    cfg += "[manifold]\n";
    cfg += "d = 1\n";
    cfg += "beta = [\"0\"]\n";
    cfg += "v_lower = [" + detail::fmt(v_lower) + "]\n";
    cfg += "v_upper = [" + detail::fmt(v_upper) + "]\n";
    if (!analysis_extra.empty()) cfg += "\n[analysis]\n" + analysis_extra;
    return cfg;
}

// Single-zone regression system with F_0 = 0: classical first-order averaging,
// g_1(z) = int_0^T F_1(s, z) ds.
inline std::string make_smooth_config() {
    const double pi = std::numbers::pi;
    std::string cfg;
    cfg += "[system]\n";
    cfg += "m = 2\n";
    cfg += "T = " + detail::fmt(2.0 * pi) + "\n";
    cfg += "k = 1\n";
    cfg += "switch_times = [0, " + detail::fmt(2.0 * pi) + "]\n\n";
    cfg += "[[zone]]\n";
    cfg += "rhs_order_0 = [\"0\", \"0\"]\n";
    cfg += "rhs_order_1 = [\"cos(t)^2*x_1 + sin(t)\", \"sin(t)^2*x_2 - cos(t)\"]\n\n";
    cfg += "[manifold]\n";
    cfg += "d = 2\n";
    cfg += "beta = []\n";
    cfg += "v_lower = [-1, -1]\n";
    cfg += "v_upper = [1, 1]\n";
    return cfg;
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

struct ExampleEntry {
    std::string name;
    std::string description;
    std::string config;
    int oracle_order = 0;  // which f_i the oracle evaluates; 0 = no oracle
    std::function<double(double, const std::map<std::string, double>&)> oracle;
    double oracle_tolerance = 0.0;  // documented normwise relative tolerance
};

inline const std::vector<ExampleEntry>& builtin_examples() {
    static const std::vector<ExampleEntry> entries = [] {
        std::vector<ExampleEntry> v;

        v.push_back(ExampleEntry{
            "ex1_cos",
            "invariant surface z = cos x, first-order analysis",
            make_surface_config("cos(x)", 1, {{"a0", 0.1}, {"a1", 0.2}, {"b1", 1.0}}, 0.5, 7.0),
            1,
            [](double r, const std::map<std::string, double>& p) {
                return oracle_f1_surface_cos(r, p.at("b1"));
            },
            1e-5});

        v.push_back(ExampleEntry{
            "ex1_sin",
            "invariant surface z = sin x, first-order analysis",
            make_surface_config("sin(x)", 1, {{"a0", 0.15}, {"a1", 1.0}, {"b1", 0.4}}, 0.5, 7.0),
            1,
            [](double r, const std::map<std::string, double>& p) {
                return oracle_f1_surface_sin(r, p.at("a1"));
            },
            1e-5});

        v.push_back(ExampleEntry{
            "ex1_quad",
            "invariant surface z = 2x^2 - y^2: f_1 vanishes, second-order analysis",
            make_surface_config("2*x^2 - y^2", 2,
                                {{"a0", 1.0}, {"a1", 1.0}, {"b1", 0.5}, {"b2", -2.0}}, 0.5, 3.0),
            2,
            [](double r, const std::map<std::string, double>& p) {
                return oracle_f2_cubic(r, p.at("a0"), p.at("a1"), p.at("b1"), p.at("b2"));
            },
            1e-4});

        v.push_back(ExampleEntry{
            "fourzone",
            "piecewise-constant center crossed with a contracting direction",
            make_fourzone_config({{"a1", 1.0}, {"a2", 1.0}, {"a3", 1.0}, {"a4", 1.0},
                                  {"b1", -1.0},
                                  {"c1", 0.3}, {"c3", 0.1},
                                  {"d1", 0.2}, {"d2", 0.1}, {"d4", 0.05}},
                                 0.4, 3.0),
            1,
            [](double alpha, const std::map<std::string, double>& p) {
                const double a[4] = {p.at("a1"), p.at("a2"), p.at("a3"), p.at("a4")};
                const double b[4] = {p.at("b1"), p.at("b2"), p.at("b3"), p.at("b4")};
                return oracle_f1_fourzone(alpha, a, b);
            },
            1e-6});

        v.push_back(ExampleEntry{
            "smooth_single_zone",
            "single smooth zone with F_0 = 0 (classical averaging regression)",
            make_smooth_config(),
            0,
            nullptr,
            0.0});

        return v;
    }();
    return entries;
}

inline const ExampleEntry* find_example(const std::string& name) {
    for (const ExampleEntry& e : builtin_examples())
        if (e.name == name) return &e;
    return nullptr;
}

}  // namespace pwavg::examples
