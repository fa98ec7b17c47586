#pragma once

#include <functional>
#include <random>
#include <vector>

#include "pwavg/expr.hpp"

// Shared helpers for the unit suites: random expression trees, finite
// differences, adaptive quadrature.

namespace testsup {

using pwavg::expr::ExprPtr;

// Central difference with one Richardson level.
inline double fd_derivative(const std::function<double(double)>& f, double x, double h) {
    auto d = [&](double step) { return (f(x + step) - f(x - step)) / (2.0 * step); };
    double d1 = d(h), d2 = d(h / 2.0);
    return (4.0 * d2 - d1) / 3.0;
}

// Adaptive Simpson quadrature; the first few levels always subdivide so that
// symmetric integrands cannot fool the refinement comparison.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol = 1e-12, int depth = 24) {
    struct Rec {
        static double go(const std::function<double(double)>& f, double a, double b, double fa,
                         double fm, double fb, double whole, double tol, int depth, int force) {
            double m = 0.5 * (a + b);
            double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
            double flm = f(lm), frm = f(rm);
            double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if (depth <= 0 || (force <= 0 && std::abs(left + right - whole) < 15.0 * tol))
                return left + right + (left + right - whole) / 15.0;
            return go(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, force - 1) +
                   go(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, force - 1);
        }
    };
    double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return Rec::go(f, a, b, fa, fm, fb, whole, tol, depth, 5);
}

struct ExprGenOptions {
    bool allow_div = true;
    bool allow_abs = true;
    bool allow_log_sqrt = true;
    bool allow_eps = false;  // include the eps variable (for series tests)
    int max_depth = 5;
};

// Random expression over the given table (optionally with an eps slot).
class ExprGen {
public:
    ExprGen(const pwavg::expr::VarTable& vars, int eps_slot, ExprGenOptions opt, unsigned seed)
        : vars_(vars), eps_slot_(eps_slot), opt_(opt), rng_(seed) {}

    ExprPtr gen() { return gen_node(opt_.max_depth); }

private:
    ExprPtr gen_node(int depth) {
        namespace ex = pwavg::expr;
        std::uniform_int_distribution<int> pick(0, depth <= 0 ? 1 : 9);
        switch (pick(rng_)) {
            case 0: {
                std::uniform_real_distribution<double> num(-3.0, 3.0);
                return ex::number(num(rng_));
            }
            case 1: {
                std::uniform_int_distribution<int> v(0, vars_.size() - 1);
                int slot = v(rng_);
                if (!opt_.allow_eps && slot == eps_slot_) slot = (slot + 1) % vars_.size();
                return ex::variable(vars_.name(slot), slot);
            }
            case 2: return ex::add(gen_node(depth - 1), gen_node(depth - 1));
            case 3: return ex::sub(gen_node(depth - 1), gen_node(depth - 1));
            case 4: return ex::mul(gen_node(depth - 1), gen_node(depth - 1));
            case 5: {
                if (!opt_.allow_div) return ex::mul(gen_node(depth - 1), gen_node(depth - 1));
                return ex::div(gen_node(depth - 1), gen_node(depth - 1));
            }
            case 6: {
                std::uniform_int_distribution<int> ops(0, 3);
                static const ex::UnaryOp table[] = {ex::UnaryOp::Neg, ex::UnaryOp::Sin,
                                                    ex::UnaryOp::Cos, ex::UnaryOp::Exp};
                return ex::unary(table[ops(rng_)], gen_node(depth - 1));
            }
            case 7: {
                if (!opt_.allow_log_sqrt) return gen_node(depth - 1);
                // keep the argument positive
                ExprPtr arg = gen_node(depth - 2 < 0 ? 0 : depth - 2);
                ExprPtr positive = ex::add(ex::mul(arg, arg), ex::number(0.7));
                std::uniform_int_distribution<int> c(0, 1);
                return ex::unary(c(rng_) ? ex::UnaryOp::Log : ex::UnaryOp::Sqrt, positive);
            }
            case 8: {
                if (!opt_.allow_abs) return gen_node(depth - 1);
                return ex::unary(ex::UnaryOp::Abs, gen_node(depth - 1));
            }
            default: {
                std::uniform_int_distribution<int> e(2, 3);
                return ex::pow(gen_node(depth - 1), e(rng_));
            }
        }
    }

    const pwavg::expr::VarTable& vars_;
    int eps_slot_;
    ExprGenOptions opt_;
    std::mt19937 rng_;
};

}  // namespace testsup
