#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pwavg/linalg.hpp"
#include "pwavg/model.hpp"
#include "pwavg/odeint.hpp"

// Averaged functions g_0..g_k of the piecewise system: the fundamental matrix
// Y(t,z) of the variational equation, the order-i intermediates w_i, and the
// final assembly g_i = Y^{-1}(T,z) w_i(T,z) / i!.  Two independent routes are
// provided: a single augmented forward integration (canonical), and a
// zone-by-zone variation-of-parameters reconstruction organized through
// partial Bell polynomials (cross-check).  This header also owns the
// combinatorics both routes are built from.

namespace pwavg::averaging {

using linalg::Mat;
using linalg::Vec;

// ---------------------------------------------------------------------------
// Combinatorics
// ---------------------------------------------------------------------------

inline long long factorial(int n) {
    long long f = 1;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

// A tuple (b_1..b_len) of nonnegative integers with sum(j*b_j) = weight.
// coeff = 1 / (prod_j b_j! * (j!)^{b_j}).
struct PartitionTuple {
    std::vector<int> b;
    int weight = 0;
    int L = 0;  // sum of b_j: the derivative order the tuple calls for
    double coeff = 0.0;
};

namespace detail {

inline void enumerate_weighted_tuples(int len, int weight, std::vector<PartitionTuple>& out) {
    std::vector<int> b(static_cast<std::size_t>(len), 0);
    // descending lexicographic enumeration
    auto rec = [&](auto&& self, int j, int rem) -> void {
        if (j > len) {
            if (rem != 0) return;
            PartitionTuple t;
            t.b = b;
            t.weight = weight;
            long long denom = 1;
            for (int jj = 1; jj <= len; ++jj) {
                int bj = b[static_cast<std::size_t>(jj - 1)];
                t.L += bj;
                denom *= factorial(bj);
                for (int r = 0; r < bj; ++r) denom *= factorial(jj);
            }
            t.coeff = 1.0 / static_cast<double>(denom);
            out.push_back(std::move(t));
            return;
        }
        for (int bj = rem / j; bj >= 0; --bj) {
            b[static_cast<std::size_t>(j - 1)] = bj;
            self(self, j + 1, rem - j * bj);
        }
        b[static_cast<std::size_t>(j - 1)] = 0;
    };
    rec(rec, 1, weight);
}

}  // namespace detail

// S_l: all l-tuples (b_1..b_l) with b_1 + 2 b_2 + ... + l b_l = l.
inline std::vector<PartitionTuple> enumerate_partition_tuples(int l) {
    if (l < 1 || l > 6) throw PreconditionError("enumerate_partition_tuples: need 1 <= l <= 6");
    std::vector<PartitionTuple> out;
    detail::enumerate_weighted_tuples(l, l, out);
    return out;
}

// S'_i: all (i-1)-tuples (c_1..c_{i-1}) with c_1 + 2 c_2 + ... = i.  These are
// exactly the S_i tuples without the one that would reference order i itself.
inline std::vector<PartitionTuple> enumerate_transverse_tuples(int i) {
    if (i < 1 || i > 6) throw PreconditionError("enumerate_transverse_tuples: need 1 <= i <= 6");
    std::vector<PartitionTuple> out;
    detail::enumerate_weighted_tuples(i - 1, i, out);
    return out;
}

// S~_{p,q}: tuples (b_1..b_{p-q+1}) with sum j b_j = p and sum b_j = q,
// carrying the Bell coefficient p! / (prod b_j! (j!)^{b_j}).
struct BellTuple {
    std::vector<int> b;
    double coeff = 0.0;
};

inline std::vector<BellTuple> enumerate_bell_tuples(int p, int q) {
    if (q < 1 || q > p) throw PreconditionError("enumerate_bell_tuples: need 1 <= q <= p");
    std::vector<PartitionTuple> raw;
    detail::enumerate_weighted_tuples(p - q + 1, p, raw);
    std::vector<BellTuple> out;
    const double pfact = static_cast<double>(factorial(p));
    for (const PartitionTuple& t : raw) {
        if (t.L != q) continue;
        out.push_back(BellTuple{t.b, pfact * t.coeff});
    }
    return out;
}

// Partial Bell polynomial B_{p,q}(x_1, ..., x_{p-q+1}).
inline double bell_partial(int p, int q, std::span<const double> x) {
    if (static_cast<int>(x.size()) < p - q + 1)
        throw PreconditionError("bell_partial: needs p-q+1 arguments");
    double sum = 0.0;
    for (const BellTuple& t : enumerate_bell_tuples(p, q)) {
        double prod = t.coeff;
        for (std::size_t j = 0; j < t.b.size(); ++j)
            for (int r = 0; r < t.b[j]; ++r) prod *= x[j];
        sum += prod;
    }
    return sum;
}

// ---------------------------------------------------------------------------
// Derivative tensors
// ---------------------------------------------------------------------------

// Dense symmetric tensor of order-L partials of a vector field, evaluated at
// a point: entry(c, i_1..i_L) = d^L F_c / dx_{i_1} ... dx_{i_L}.  Input and
// output dimensions are independent (state tensors are m -> m; transverse
// b-derivative tensors are (m-d) -> p).
struct DerivTensor {
    int in_dim = 0;
    int out_dim = 0;
    int order = 0;
    std::vector<double> a;  // index: c * in_dim^order + dense tuple index

    double entry(int c, std::span<const int> idx) const {
        std::size_t t = 0;
        for (int j = 0; j < order; ++j) t = t * static_cast<std::size_t>(in_dim) + idx[j];
        return a[static_cast<std::size_t>(c) * tuple_count() + t];
    }

    std::size_t tuple_count() const {
        std::size_t p = 1;
        for (int j = 0; j < order; ++j) p *= static_cast<std::size_t>(in_dim);
        return p;
    }
};

// Multilinear application of the tensor to a list of vectors (with the
// symmetric convention, argument order is irrelevant).
inline Vec multilinear_contract(const DerivTensor& T, std::span<const Vec> vectors) {
    if (static_cast<int>(vectors.size()) != T.order)
        throw PreconditionError("multilinear_contract: arity mismatch");
    const std::size_t nt = T.tuple_count();
    Vec out(static_cast<std::size_t>(T.out_dim), 0.0);
    std::vector<int> digits(static_cast<std::size_t>(T.order), 0);
    for (std::size_t dt = 0; dt < nt; ++dt) {
        std::size_t rest = dt;
        for (int j = T.order - 1; j >= 0; --j) {
            digits[j] = static_cast<int>(rest % static_cast<std::size_t>(T.in_dim));
            rest /= static_cast<std::size_t>(T.in_dim);
        }
        double w = 1.0;
        for (int j = 0; j < T.order; ++j) w *= vectors[j][digits[j]];
        if (w == 0.0) continue;
        for (int c = 0; c < T.out_dim; ++c)
            out[c] += T.a[static_cast<std::size_t>(c) * nt + dt] * w;
    }
    return out;
}

// Convenience overload taking (vector, multiplicity) pairs.
inline Vec multilinear_contract(const DerivTensor& T,
                                std::span<const std::pair<const Vec*, int>> args) {
    std::vector<Vec> expanded;
    for (const auto& [v, mult] : args)
        for (int r = 0; r < mult; ++r) expanded.push_back(*v);
    return multilinear_contract(T, expanded);
}

// ---------------------------------------------------------------------------
// Averaged functions
// ---------------------------------------------------------------------------

struct AveragedResult {
    Vec z;                    // base point
    int m = 0, k = 0;
    odeint::Trajectory path;  // augmented path: x, Y, w_1..w_k (or v_i), trace
    Mat YT;                   // Y(T, z)
    std::vector<Vec> w_final; // w_i(T, z), i = 1..k (index i-1)
    std::vector<Vec> g;       // g_0..g_k
    double det_YT = 0.0;
    double trace_integral = 0.0;  // int_0^T trace dF_0(s, x(s)) ds
    double cond_YT = 0.0;
};

class Engine {
public:
    // k_eff: number of intermediate orders to carry (defaults to the system
    // order); k_eff = 0 computes only x and Y.
    explicit Engine(const model::PiecewiseSystem& sys, int k_eff = -1,
                    odeint::Tolerances tol = {})
        : sys_(&sys), k_(k_eff < 0 ? sys.order : k_eff), tol_(tol) {
        if (k_ < 0 || k_ > sys.order)
            throw PreconditionError("Engine: k_eff must be in 0..system order");
        for (int l = 1; l <= k_; ++l) tuples_.push_back(enumerate_partition_tuples(l));
        for (int p = 1; p <= k_; ++p) {
            bell_.emplace_back();
            for (int q = 1; q <= p; ++q) bell_.back().push_back(enumerate_bell_tuples(p, q));
        }
        const int nz = sys.zone_count();
        tensors_.resize(static_cast<std::size_t>(nz));
        for (int j = 0; j < nz; ++j) {
            tensors_[j].resize(static_cast<std::size_t>(k_) + 1);
            for (int q = 0; q <= k_; ++q) {
                const int maxL = q == 0 ? std::max(1, k_) : k_ - q;
                for (int L = 0; L <= maxL; ++L)
                    tensors_[j][q].push_back(build_tensor_asts(j, q, L));
            }
        }
    }

    const model::PiecewiseSystem& system() const { return *sys_; }
    int orders() const { return k_; }
    odeint::Tolerances tolerances() const { return tol_; }

    int state_dim() const { return sys_->m + sys_->m * sys_->m + k_ * sys_->m + 1; }

    // State layout helpers (x | Y row-major | w_1..w_k | trace integral).
    static std::span<const double> x_of(std::span<const double> s, int m) { return s.subspan(0, m); }
    static Mat y_of(std::span<const double> s, int m) {
        Mat Y(m, m);
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < m; ++c) Y(r, c) = s[static_cast<std::size_t>(m + r * m + c)];
        return Y;
    }
    static std::span<const double> w_of(std::span<const double> s, int m, int i) {
        return s.subspan(static_cast<std::size_t>(m + m * m + (i - 1) * m), m);
    }
    static double trace_of(std::span<const double> s, int m, int k) {
        return s[static_cast<std::size_t>(m + m * m + k * m)];
    }

    // One augmented forward integration of (x, Y, w_1..w_k).
    AveragedResult averaged_functions(std::span<const double> z) const {
        check_point(z);
        Workspace ws(*this);
        odeint::Trajectory path = odeint::integrate_zoned(
            *sys_, state_dim(),
            [&](int j) {
                return [this, &ws, j](double t, std::span<const double> s, std::span<double> ds) {
                    canonical_rhs(j, t, s, ds, ws);
                };
            },
            initial_state(z), tol_);
        return assemble(z, std::move(path), /*bell=*/false);
    }

    // Variation-of-parameters route: v_i = Y^{-1} w_i is integrated, with the
    // integrand organized through partial Bell polynomials.
    AveragedResult averaged_functions_bell(std::span<const double> z) const {
        check_point(z);
        Workspace ws(*this);
        odeint::Trajectory path = odeint::integrate_zoned(
            *sys_, state_dim(),
            [&](int j) {
                return [this, &ws, j](double t, std::span<const double> s, std::span<double> ds) {
                    bell_rhs(j, t, s, ds, ws);
                };
            },
            initial_state(z), tol_);
        return assemble(z, std::move(path), /*bell=*/true);
    }

    // Tensor of partials of the order-i field of a zone at a point.
    DerivTensor derivative_tensor(int zone, int order_i, int L, double t,
                                  std::span<const double> x) const {
        if (order_i < 0 || order_i > sys_->order)
            throw PreconditionError("derivative_tensor: order out of range");
        if (L < 0 || L > sys_->order + 1)
            throw PreconditionError("derivative_tensor: need L <= k+1");
        std::vector<double> env = sys_->make_env();
        env[0] = t;
        for (int c = 0; c < sys_->m; ++c) env[static_cast<std::size_t>(1 + c)] = x[c];
        if (order_i <= k_ && L < static_cast<int>(tensors_[zone][order_i].size())) {
            DerivTensor T;
            eval_tensor(tensors_[zone][order_i][L], env, T);
            return T;
        }
        TensorAsts asts = build_tensor_asts(zone, order_i, L);
        DerivTensor T;
        eval_tensor(asts, env, T);
        return T;
    }

private:
    struct TensorAsts {
        int m = 0, order = 0;
        std::vector<expr::Compiled> entries;  // [sorted_index * m + c]
        std::vector<int> dense_to_sorted;     // m^order -> sorted index
    };

    struct Workspace {
        std::vector<double> env;
        // evaluated dense tensors for the current (t, x), indexed [q][L]
        std::vector<std::vector<DerivTensor>> field;
        std::vector<Vec> wvecs;   // w_1..w_k at the current state
        std::vector<Vec> vterm;   // scratch

        explicit Workspace(const Engine& e) : env(e.sys_->make_env()) {
            field.resize(static_cast<std::size_t>(e.k_) + 1);
            for (int q = 0; q <= e.k_; ++q)
                field[q].resize(e.tensors_.empty() ? 0 : e.tensors_[0][q].size());
            wvecs.assign(static_cast<std::size_t>(std::max(e.k_, 1)),
                         Vec(static_cast<std::size_t>(e.sys_->m), 0.0));
        }
    };

    void check_point(std::span<const double> z) const {
        if (static_cast<int>(z.size()) != sys_->m)
            throw PreconditionError("averaged_functions: point has wrong dimension");
    }

    Vec initial_state(std::span<const double> z) const {
        const int m = sys_->m;
        Vec s(static_cast<std::size_t>(state_dim()), 0.0);
        for (int c = 0; c < m; ++c) s[c] = z[c];
        for (int r = 0; r < m; ++r) s[static_cast<std::size_t>(m + r * m + r)] = 1.0;  // Y(0) = Id
        return s;
    }

    TensorAsts build_tensor_asts(int zone, int q, int L) const {
        const int m = sys_->m;
        const model::Zone& zn = sys_->zones[static_cast<std::size_t>(zone)];
        TensorAsts out;
        out.m = m;
        out.order = L;

        // level-by-level symbolic differentiation over sorted multi-indices
        std::map<std::vector<int>, std::vector<expr::ExprPtr>> level;
        level[{}] = zn.rhs[static_cast<std::size_t>(q)];
        for (int lev = 1; lev <= L; ++lev) {
            std::map<std::vector<int>, std::vector<expr::ExprPtr>> next;
            for (const auto& [idx, comps] : level) {
                int start = idx.empty() ? 0 : idx.back();
                for (int i = start; i < m; ++i) {
                    std::vector<int> nidx = idx;
                    nidx.push_back(i);
                    std::vector<expr::ExprPtr> dcomps;
                    dcomps.reserve(comps.size());
                    for (const auto& cexpr : comps)
                        dcomps.push_back(expr::differentiate(cexpr, sys_->x_slot(i)));
                    next.emplace(std::move(nidx), std::move(dcomps));
                }
            }
            level = std::move(next);
        }

        std::map<std::vector<int>, int> sorted_index;
        for (const auto& [idx, comps] : level) {
            int si = static_cast<int>(sorted_index.size());
            sorted_index.emplace(idx, si);
            for (const auto& cexpr : comps) out.entries.emplace_back(cexpr);
        }

        std::size_t nt = 1;
        for (int j = 0; j < L; ++j) nt *= static_cast<std::size_t>(m);
        out.dense_to_sorted.resize(nt);
        std::vector<int> digits(static_cast<std::size_t>(L));
        for (std::size_t dt = 0; dt < nt; ++dt) {
            std::size_t rest = dt;
            for (int j = L - 1; j >= 0; --j) {
                digits[j] = static_cast<int>(rest % static_cast<std::size_t>(m));
                rest /= static_cast<std::size_t>(m);
            }
            std::vector<int> sorted = digits;
            std::sort(sorted.begin(), sorted.end());
            out.dense_to_sorted[dt] = sorted_index.at(sorted);
        }
        return out;
    }

    void eval_tensor(const TensorAsts& asts, std::span<const double> env, DerivTensor& T) const {
        const int m = asts.m;
        const std::size_t nt = asts.dense_to_sorted.size();
        const std::size_t nsorted = asts.entries.size() / static_cast<std::size_t>(m);
        T.in_dim = m;
        T.out_dim = m;
        T.order = asts.order;
        T.a.resize(static_cast<std::size_t>(m) * nt);
        thread_local std::vector<double> sorted_vals;
        sorted_vals.resize(nsorted * static_cast<std::size_t>(m));
        for (std::size_t s = 0; s < nsorted; ++s)
            for (int c = 0; c < m; ++c)
                sorted_vals[s * m + c] = asts.entries[s * m + c].eval(env);
        for (std::size_t dt = 0; dt < nt; ++dt) {
            const std::size_t s = static_cast<std::size_t>(asts.dense_to_sorted[dt]);
            for (int c = 0; c < m; ++c)
                T.a[static_cast<std::size_t>(c) * nt + dt] = sorted_vals[s * m + c];
        }
    }

    void eval_fields(int zone, double t, std::span<const double> x, Workspace& ws) const {
        const int m = sys_->m;
        ws.env[0] = t;
        for (int c = 0; c < m; ++c) ws.env[static_cast<std::size_t>(1 + c)] = x[c];
        for (int q = 0; q <= k_; ++q)
            for (std::size_t L = 0; L < tensors_[zone][q].size(); ++L)
                eval_tensor(tensors_[zone][q][L], ws.env, ws.field[q][L]);
    }

    // w_i' = i! [ F_i + sum_{l=1}^{i} sum_{S_l} c(b) d^L F_{i-l} (.) prod w_j^{b_j} ]
    Vec order_rhs(int i, const Workspace& ws) const {
        const int m = sys_->m;
        Vec acc(ws.field[i][0].a.begin(), ws.field[i][0].a.end());  // F_i at the point
        std::vector<Vec> args;
        for (int l = 1; l <= i; ++l) {
            for (const PartitionTuple& tup : tuples_[static_cast<std::size_t>(l - 1)]) {
                const DerivTensor& T = ws.field[i - l][tup.L];
                args.clear();
                for (std::size_t j = 0; j < tup.b.size(); ++j)
                    for (int r = 0; r < tup.b[j]; ++r) args.push_back(ws.wvecs[j]);
                Vec term = multilinear_contract(T, args);
                for (int c = 0; c < m; ++c) acc[c] += tup.coeff * term[c];
            }
        }
        const double ifact = static_cast<double>(factorial(i));
        for (int c = 0; c < m; ++c) acc[c] *= ifact;
        return acc;
    }

    void canonical_rhs(int zone, double t, std::span<const double> s, std::span<double> ds,
                       Workspace& ws) const {
        const int m = sys_->m;
        eval_fields(zone, t, s.subspan(0, m), ws);
        const DerivTensor& F0 = ws.field[0][0];
        const DerivTensor& J = ws.field[0][1];
        const std::size_t off_y = static_cast<std::size_t>(m);
        // x' = F_0
        for (int c = 0; c < m; ++c) ds[c] = F0.a[static_cast<std::size_t>(c)];
        // Y' = dF_0 * Y
        double trace = 0.0;
        for (int r = 0; r < m; ++r) {
            trace += J.a[static_cast<std::size_t>(r) * m + r];
            for (int c = 0; c < m; ++c) {
                double sum = 0.0;
                for (int q = 0; q < m; ++q)
                    sum += J.a[static_cast<std::size_t>(r) * m + q] * s[off_y + q * m + c];
                ds[off_y + static_cast<std::size_t>(r) * m + c] = sum;
            }
        }
        for (int i = 1; i <= k_; ++i)
            for (int c = 0; c < m; ++c)
                ws.wvecs[i - 1][c] = s[off_y + static_cast<std::size_t>(m) * m + (i - 1) * m + c];
        for (int i = 1; i <= k_; ++i) {
            Vec wi = order_rhs(i, ws);
            for (int c = 0; c < m; ++c)
                ds[off_y + static_cast<std::size_t>(m) * m + (i - 1) * m + c] = wi[c];
        }
        ds[static_cast<std::size_t>(state_dim()) - 1] = trace;
    }

    // v_i = Y^{-1} w_i; v_i' = Y^{-1} [ i! F_i
    //   + sum_{q=2}^{i} d^q F_0 . B_{i,q}(w_1..w_{i-q+1})
    //   + sum_{l=1}^{i-1} sum_{q=1}^{l} (i!/l!) d^q F_{i-l} . B_{l,q}(w_1..w_{l-q+1}) ]
    void bell_rhs(int zone, double t, std::span<const double> s, std::span<double> ds,
                  Workspace& ws) const {
        const int m = sys_->m;
        eval_fields(zone, t, s.subspan(0, m), ws);
        const DerivTensor& F0 = ws.field[0][0];
        const DerivTensor& J = ws.field[0][1];
        const std::size_t off_y = static_cast<std::size_t>(m);
        for (int c = 0; c < m; ++c) ds[c] = F0.a[static_cast<std::size_t>(c)];
        double trace = 0.0;
        Mat Y = y_of(s, m);
        for (int r = 0; r < m; ++r) {
            trace += J.a[static_cast<std::size_t>(r) * m + r];
            for (int c = 0; c < m; ++c) {
                double sum = 0.0;
                for (int q = 0; q < m; ++q)
                    sum += J.a[static_cast<std::size_t>(r) * m + q] * Y(q, c);
                ds[off_y + static_cast<std::size_t>(r) * m + c] = sum;
            }
        }
        linalg::Lu lu(Y);
        // w_j = Y v_j
        for (int i = 1; i <= k_; ++i) {
            std::span<const double> vi =
                s.subspan(off_y + static_cast<std::size_t>(m) * m + (i - 1) * m, m);
            ws.wvecs[i - 1] = Y.mul(vi);
        }
        for (int i = 1; i <= k_; ++i) {
            Vec acc(static_cast<std::size_t>(m), 0.0);
            const double ifact = static_cast<double>(factorial(i));
            for (int c = 0; c < m; ++c)
                acc[c] = ifact * ws.field[i][0].a[static_cast<std::size_t>(c)];
            for (int q = 2; q <= i; ++q) {
                Vec term = bell_contract(ws.field[0][q], i, q, ws);
                for (int c = 0; c < m; ++c) acc[c] += term[c];
            }
            for (int l = 1; l <= i - 1; ++l) {
                const double scale = ifact / static_cast<double>(factorial(l));
                for (int q = 1; q <= l; ++q) {
                    Vec term = bell_contract(ws.field[i - l][q], l, q, ws);
                    for (int c = 0; c < m; ++c) acc[c] += scale * term[c];
                }
            }
            Vec vi = lu.solve(acc);
            for (int c = 0; c < m; ++c)
                ds[off_y + static_cast<std::size_t>(m) * m + (i - 1) * m + c] = vi[c];
        }
        ds[static_cast<std::size_t>(state_dim()) - 1] = trace;
    }

    // d^q F . B_{p,q}(w_1, ..., w_{p-q+1}) with vector arguments contracted
    // through the symmetric tensor.
    Vec bell_contract(const DerivTensor& T, int p, int q, const Workspace& ws) const {
        const int m = sys_->m;
        Vec out(static_cast<std::size_t>(m), 0.0);
        std::vector<Vec> args;
        for (const BellTuple& tup : bell_[static_cast<std::size_t>(p - 1)][static_cast<std::size_t>(q - 1)]) {
            args.clear();
            for (std::size_t j = 0; j < tup.b.size(); ++j)
                for (int r = 0; r < tup.b[j]; ++r) args.push_back(ws.wvecs[j]);
            Vec term = multilinear_contract(T, args);
            for (int c = 0; c < m; ++c) out[c] += tup.coeff * term[c];
        }
        return out;
    }

    AveragedResult assemble(std::span<const double> z, odeint::Trajectory path, bool bell) const {
        const int m = sys_->m;
        AveragedResult res;
        res.z.assign(z.begin(), z.end());
        res.m = m;
        res.k = k_;
        const Vec& sT = path.final_state();
        res.YT = y_of(sT, m);
        res.trace_integral = trace_of(sT, m, k_);
        linalg::Lu lu(res.YT);
        if (lu.singular())
            throw SingularError("averaged_functions: Y(T,z) is singular");
        res.det_YT = lu.det();
        res.cond_YT = res.YT.norm1() * lu.inverse().norm1();

        Vec xT(sT.begin(), sT.begin() + m);
        Vec disp(static_cast<std::size_t>(m));
        for (int c = 0; c < m; ++c) disp[c] = xT[c] - z[c];
        res.g.push_back(lu.solve(disp));
        for (int i = 1; i <= k_; ++i) {
            Vec wi(static_cast<std::size_t>(m));
            std::span<const double> tail = w_of(sT, m, i);
            if (bell) {
                Vec vi(tail.begin(), tail.end());
                wi = res.YT.mul(vi);
            } else {
                wi.assign(tail.begin(), tail.end());
            }
            res.w_final.push_back(wi);
            Vec gi = lu.solve(wi);
            const double ifact = static_cast<double>(factorial(i));
            for (int c = 0; c < m; ++c) gi[c] /= ifact;
            res.g.push_back(std::move(gi));
        }
        res.path = std::move(path);
        return res;
    }

    const model::PiecewiseSystem* sys_;
    int k_;
    odeint::Tolerances tol_;
    std::vector<std::vector<PartitionTuple>> tuples_;            // S_l, l = 1..k
    std::vector<std::vector<std::vector<BellTuple>>> bell_;      // [p-1][q-1]
    std::vector<std::vector<std::vector<TensorAsts>>> tensors_;  // [zone][q][L]
};

}  // namespace pwavg::averaging

// ---------------------------------------------------------------------------
// Hypothesis validation (completes the model API; needs the engine above)
// ---------------------------------------------------------------------------

namespace pwavg::model {

struct HypothesisSample {
    Vec alpha;
    Vec z;
    double periodicity_residual = std::numeric_limits<double>::quiet_NaN();
    double abs_det_delta = std::numeric_limits<double>::quiet_NaN();
    std::string error;  // empty when the sample was evaluated successfully

    bool ok() const { return error.empty(); }
};

struct HypothesisReport {
    std::vector<HypothesisSample> samples;
    double max_periodicity_residual = 0.0;
    double min_abs_det_delta = std::numeric_limits<double>::infinity();
    bool hb_pass = false;
    bool delta_pass = false;
    int failures = 0;

    bool pass() const { return hb_pass && delta_pass && failures == 0; }
};

// Samples alpha uniformly in V; checks that unperturbed solutions through
// z_alpha are T-periodic and that the transverse block of Id - Y^{-1}(T) is
// uniformly nondegenerate.  Sampling is deterministic (fixed seed).
inline HypothesisReport validate_hypotheses(const PiecewiseSystem& sys,
                                            const ManifoldChart& chart, int samples,
                                            const AnalysisOptions& opt = {}) {
    if (samples < 1) throw PreconditionError("validate_hypotheses: samples must be >= 1");
    averaging::Engine engine(sys, 0, odeint::tolerances_of(opt));
    std::mt19937_64 rng(0x5eed5eedULL);
    HypothesisReport report;
    const int md = sys.m - chart.d;
    for (int s = 0; s < samples; ++s) {
        HypothesisSample sample;
        sample.alpha.resize(static_cast<std::size_t>(chart.d));
        for (int i = 0; i < chart.d; ++i) {
            std::uniform_real_distribution<double> u(chart.lower[i], chart.upper[i]);
            sample.alpha[i] = u(rng);
        }
        try {
            sample.z = chart.point(sample.alpha, sys.m);
            averaging::AveragedResult avg = engine.averaged_functions(sample.z);
            const Vec& xT = avg.path.final_state();
            double resid = 0.0;
            for (int c = 0; c < sys.m; ++c)
                resid = std::max(resid, std::abs(xT[c] - sample.z[c]));
            sample.periodicity_residual = resid;
            report.max_periodicity_residual = std::max(report.max_periodicity_residual, resid);
            if (md > 0) {
                linalg::Lu lu(avg.YT);
                linalg::Mat inv = lu.inverse();
                linalg::Mat delta(md, md);
                for (int r = 0; r < md; ++r)
                    for (int c = 0; c < md; ++c)
                        delta(r, c) = (r == c ? 1.0 : 0.0) - inv(chart.d + r, chart.d + c);
                sample.abs_det_delta = std::abs(linalg::Lu(delta).det());
                report.min_abs_det_delta = std::min(report.min_abs_det_delta, sample.abs_det_delta);
            }
        } catch (const Error& err) {
            sample.error = err.what();
            ++report.failures;
        }
        report.samples.push_back(std::move(sample));
    }
    report.hb_pass = report.failures == 0 &&
                     report.max_periodicity_residual <= opt.periodicity_tol;
    report.delta_pass = report.failures == 0 &&
                        (md == 0 || report.min_abs_det_delta > opt.degeneracy_floor);
    return report;
}

}  // namespace pwavg::model
