#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "pwavg/averaging.hpp"

// Lyapunov-Schmidt assembly: the transverse nondegeneracy matrix Delta_alpha,
// numerical b-derivatives of the averaged functions, the gamma recursion, and
// the bifurcation functions f_i.  pi projects onto the first d (manifold)
// coordinates, pi-perp onto the last m-d (transverse) ones.

namespace pwavg::lsred {

using averaging::DerivTensor;
using linalg::Mat;
using linalg::Vec;

// Lower-right (m-d) x (m-d) block of Id - Y(T)^{-1}.
inline Mat delta_matrix(const Mat& YT, int m, int d) {
    if (YT.rows() != m || YT.cols() != m)
        throw PreconditionError("delta_matrix: matrix dimension mismatch");
    linalg::Lu lu(YT);
    if (lu.singular()) throw SingularError("delta_matrix: Y(T) is singular");
    Mat inv = lu.inverse();
    const int md = m - d;
    Mat delta(md, md);
    for (int r = 0; r < md; ++r)
        for (int c = 0; c < md; ++c) delta(r, c) = (r == c ? 1.0 : 0.0) - inv(d + r, d + c);
    return delta;
}

struct BDerivativeOptions {
    double h_order1 = 1e-4;
    double h_order2 = 1e-3;
    double h_higher = 5e-3;  // order >= 3

    double step(int order, double bnorm) const {
        double h0 = order <= 1 ? h_order1 : (order == 2 ? h_order2 : h_higher);
        return h0 * (1.0 + bnorm);
    }
};

// Derivative tensor of order `order` of g with respect to the b-coordinates,
// by products of central differences with one Richardson level; g maps a
// b-vector (dimension nb) to R^p.
inline DerivTensor b_derivative(const std::function<Vec(std::span<const double>)>& g,
                                std::span<const double> b0, int order, int p,
                                BDerivativeOptions opt = {}) {
    const int nb = static_cast<int>(b0.size());
    if (order < 1) throw PreconditionError("b_derivative: order must be >= 1");
    const double h = opt.step(order, linalg::norm_inf(b0));

    std::map<std::vector<double>, Vec> cache;
    auto eval = [&](const std::vector<double>& offset) -> const Vec& {
        auto it = cache.find(offset);
        if (it != cache.end()) return it->second;
        std::vector<double> b(b0.begin(), b0.end());
        for (int i = 0; i < nb; ++i) b[static_cast<std::size_t>(i)] += offset[i];
        return cache.emplace(offset, g(b)).first->second;
    };

    // product of central-difference operators along idx, at step hh
    std::vector<int> idx(static_cast<std::size_t>(order), 0);
    auto stencil = [&](std::span<const int> index, double hh) -> Vec {
        Vec acc(static_cast<std::size_t>(p), 0.0);
        const int corners = 1 << order;
        for (int mask = 0; mask < corners; ++mask) {
            std::vector<double> offset(static_cast<std::size_t>(nb), 0.0);
            int sign = 1;
            for (int q = 0; q < order; ++q) {
                const int s = (mask >> q) & 1 ? 1 : -1;
                sign *= s;
                offset[static_cast<std::size_t>(index[q])] += s * hh;
            }
            const Vec& gv = eval(offset);
            for (int c = 0; c < p; ++c) acc[c] += sign * gv[c];
        }
        const double denom = std::pow(2.0 * hh, order);
        for (int c = 0; c < p; ++c) acc[c] /= denom;
        return acc;
    };

    DerivTensor T;
    T.in_dim = nb;
    T.out_dim = p;
    T.order = order;
    const std::size_t nt = T.tuple_count();
    T.a.assign(static_cast<std::size_t>(p) * nt, 0.0);

    std::map<std::vector<int>, Vec> sorted_vals;
    for (std::size_t dt = 0; dt < nt; ++dt) {
        std::size_t rest = dt;
        for (int j = order - 1; j >= 0; --j) {
            idx[j] = static_cast<int>(rest % static_cast<std::size_t>(nb));
            rest /= static_cast<std::size_t>(nb);
        }
        std::vector<int> sorted(idx.begin(), idx.end());
        std::sort(sorted.begin(), sorted.end());
        auto it = sorted_vals.find(sorted);
        if (it == sorted_vals.end()) {
            Vec coarse = stencil(sorted, h);
            Vec fine = stencil(sorted, h / 2.0);
            Vec richardson(static_cast<std::size_t>(p));
            for (int c = 0; c < p; ++c) richardson[c] = (4.0 * fine[c] - coarse[c]) / 3.0;
            it = sorted_vals.emplace(sorted, std::move(richardson)).first;
        }
        for (int c = 0; c < p; ++c) T.a[static_cast<std::size_t>(c) * nt + dt] = it->second[c];
    }
    return T;
}

struct BifurcationAssembly {
    Vec alpha;
    Vec z_alpha;
    Mat delta;              // empty when d = m
    double det_delta = 1.0;
    double cond_delta = 1.0;
    std::vector<Vec> gammas;  // gamma_1..gamma_K (index i-1), vectors in R^{m-d}
    std::vector<Vec> f;       // f_1..f_K (index i-1), vectors in R^d
};

struct AssemblyOptions {
    BDerivativeOptions fd;
    double degeneracy_floor = 1e-8;  // |det Delta| below this is an error
    bool bell_form = false;          // assemble through partial Bell polynomials
};

// Evaluates averaged functions along b-offsets from one z_alpha, caching the
// augmented integrations, and assembles gammas and bifurcation functions.
class Assembler {
public:
    Assembler(const averaging::Engine& engine, const model::ManifoldChart& chart,
              AssemblyOptions opt = {})
        : engine_(&engine), chart_(&chart), opt_(opt) {
        if (chart.d < 1 || chart.d > engine.system().m)
            throw PreconditionError("Assembler: manifold dimension out of range");
    }

    BifurcationAssembly assemble(std::span<const double> alpha, int upto) const {
        const model::PiecewiseSystem& sys = engine_->system();
        const int m = sys.m;
        const int d = chart_->d;
        const int md = m - d;
        if (upto < 1 || upto > engine_->orders())
            throw PreconditionError("Assembler: requested order exceeds the engine's");

        BifurcationAssembly out;
        out.alpha.assign(alpha.begin(), alpha.end());
        out.z_alpha = chart_->point(alpha, m);

        std::map<std::vector<double>, averaging::AveragedResult> cache;
        auto averaged_at = [&](std::span<const double> b) -> const averaging::AveragedResult& {
            std::vector<double> key(b.begin(), b.end());
            auto it = cache.find(key);
            if (it != cache.end()) return it->second;
            Vec z = out.z_alpha;
            for (int c = 0; c < md; ++c) z[static_cast<std::size_t>(d + c)] = b[c];
            return cache.emplace(std::move(key), engine_->averaged_functions(z)).first->second;
        };

        Vec b0(out.z_alpha.begin() + d, out.z_alpha.end());
        const averaging::AveragedResult& base = averaged_at(b0);

        if (md == 0) {
            // no transverse directions: f_i is just the full averaged function
            for (int i = 1; i <= upto; ++i) out.f.push_back(base.g[static_cast<std::size_t>(i)]);
            return out;
        }

        out.delta = delta_matrix(base.YT, m, d);
        linalg::Lu delta_lu(out.delta);
        out.det_delta = delta_lu.singular() ? 0.0 : delta_lu.det();
        out.cond_delta = delta_lu.singular() ? std::numeric_limits<double>::infinity()
                                             : out.delta.norm1() * delta_lu.inverse().norm1();
        if (std::abs(out.det_delta) <= opt_.degeneracy_floor)
            throw SingularError("Assembler: Delta_alpha is numerically degenerate (|det| = " +
                                std::to_string(std::abs(out.det_delta)) + ")");

        // b-derivative tensors of the full g_q, for q = 0..upto-1, L = 1..upto-q
        std::function<Vec(std::span<const double>, int)> g_at =
            [&](std::span<const double> b, int q) { return averaged_at(b).g[static_cast<std::size_t>(q)]; };
        std::vector<std::vector<DerivTensor>> D(static_cast<std::size_t>(upto));
        for (int q = 0; q < upto; ++q) {
            for (int L = 1; L <= upto - q; ++L) {
                auto slice = [&, q](std::span<const double> b) { return g_at(b, q); };
                D[q].push_back(b_derivative(slice, b0, L, m, opt_.fd));
            }
        }
        auto tensor = [&](int q, int L) -> const DerivTensor& {
            return D[static_cast<std::size_t>(q)][static_cast<std::size_t>(L - 1)];
        };

        auto project_head = [&](const Vec& v) { return Vec(v.begin(), v.begin() + d); };
        auto project_tail = [&](const Vec& v) { return Vec(v.begin() + d, v.end()); };

        // contraction of d^L g_q with gamma multiset, projected afterwards
        auto contract_gammas = [&](int q, const std::vector<int>& b) -> Vec {
            int L = 0;
            std::vector<Vec> args;
            for (std::size_t j = 0; j < b.size(); ++j)
                for (int r = 0; r < b[j]; ++r) {
                    args.push_back(out.gammas[j]);
                    ++L;
                }
            return multilinear_contract(tensor(q, L), args);
        };

        if (!opt_.bell_form) {
            // gamma_i = -i! Delta^{-1} [ pp g_i + sum_{S'_i} c d^{I'} pp g_0 (.) gamma^c
            //                          + sum_{l=1}^{i-1} sum_{S_l} c d^L pp g_{i-l} (.) gamma^c ]
            for (int i = 1; i <= upto; ++i) {
                Vec rhs = project_tail(base.g[static_cast<std::size_t>(i)]);
                for (const auto& tup : averaging::enumerate_transverse_tuples(i)) {
                    Vec term = project_tail(contract_gammas(0, tup.b));
                    for (int c = 0; c < md; ++c) rhs[c] += tup.coeff * term[c];
                }
                for (int l = 1; l <= i - 1; ++l)
                    for (const auto& tup : averaging::enumerate_partition_tuples(l)) {
                        Vec term = project_tail(contract_gammas(i - l, tup.b));
                        for (int c = 0; c < md; ++c) rhs[c] += tup.coeff * term[c];
                    }
                const double ifact = static_cast<double>(averaging::factorial(i));
                for (int c = 0; c < md; ++c) rhs[c] *= ifact;
                Vec gamma = delta_lu.solve(rhs);
                for (int c = 0; c < md; ++c) gamma[c] = -gamma[c];
                out.gammas.push_back(std::move(gamma));
            }
            // f_i = p g_i + sum_{l=1}^{i} sum_{S_l} c d^L p g_{i-l} (.) gamma^c
            for (int i = 1; i <= upto; ++i) {
                Vec fi = project_head(base.g[static_cast<std::size_t>(i)]);
                for (int l = 1; l <= i; ++l)
                    for (const auto& tup : averaging::enumerate_partition_tuples(l)) {
                        Vec term = project_head(contract_gammas(i - l, tup.b));
                        for (int c = 0; c < d; ++c) fi[c] += tup.coeff * term[c];
                    }
                out.f.push_back(std::move(fi));
            }
            return out;
        }

        // Bell form of the same assembly
        auto bell_sum = [&](int q, int p_, int q_, bool tail) -> Vec {
            // d^{q_} g_q . B_{p_,q_}(gamma_1..gamma_{p_-q_+1}), projected
            Vec acc(static_cast<std::size_t>(tail ? md : d), 0.0);
            for (const auto& tup : averaging::enumerate_bell_tuples(p_, q_)) {
                std::vector<Vec> args;
                for (std::size_t j = 0; j < tup.b.size(); ++j)
                    for (int r = 0; r < tup.b[j]; ++r) args.push_back(out.gammas[j]);
                Vec full = multilinear_contract(tensor(q, q_), args);
                Vec proj = tail ? project_tail(full) : project_head(full);
                for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += tup.coeff * proj[c];
            }
            return acc;
        };

        for (int i = 1; i <= upto; ++i) {
            const double ifact = static_cast<double>(averaging::factorial(i));
            Vec rhs = project_tail(base.g[static_cast<std::size_t>(i)]);
            for (int c = 0; c < md; ++c) rhs[c] *= ifact;
            for (int l = 1; l <= i - 1; ++l) {
                const double scale = ifact / static_cast<double>(averaging::factorial(l));
                for (int q_ = 1; q_ <= l; ++q_) {
                    Vec term = bell_sum(i - l, l, q_, /*tail=*/true);
                    for (int c = 0; c < md; ++c) rhs[c] += scale * term[c];
                }
            }
            for (int q_ = 2; q_ <= i; ++q_) {
                Vec term = bell_sum(0, i, q_, /*tail=*/true);
                for (int c = 0; c < md; ++c) rhs[c] += term[c];
            }
            Vec gamma = delta_lu.solve(rhs);
            for (int c = 0; c < md; ++c) gamma[c] = -gamma[c];
            out.gammas.push_back(std::move(gamma));
        }
        for (int i = 1; i <= upto; ++i) {
            Vec fi = project_head(base.g[static_cast<std::size_t>(i)]);
            for (int l = 1; l <= i; ++l) {
                const double inv_lfact = 1.0 / static_cast<double>(averaging::factorial(l));
                for (int q_ = 1; q_ <= l; ++q_) {
                    Vec term = bell_sum(i - l, l, q_, /*tail=*/false);
                    for (int c = 0; c < d; ++c) fi[c] += inv_lfact * term[c];
                }
            }
            out.f.push_back(std::move(fi));
        }
        return out;
    }

    // f_i(alpha) alone.
    Vec bifurcation_function(std::span<const double> alpha, int i) const {
        BifurcationAssembly a = assemble(alpha, i);
        return a.f[static_cast<std::size_t>(i) - 1];
    }

    const averaging::Engine& engine() const { return *engine_; }
    const model::ManifoldChart& chart() const { return *chart_; }
    const AssemblyOptions& options() const { return opt_; }

private:
    const averaging::Engine* engine_;
    const model::ManifoldChart* chart_;
    AssemblyOptions opt_;
};

// Free-function wrappers over the assembler.
inline std::vector<Vec> gamma_sequence(const averaging::Engine& engine,
                                       const model::ManifoldChart& chart,
                                       std::span<const double> alpha, int k,
                                       AssemblyOptions opt = {}) {
    Assembler a(engine, chart, opt);
    return a.assemble(alpha, k).gammas;
}

inline Vec bifurcation_function(const averaging::Engine& engine, const model::ManifoldChart& chart,
                                std::span<const double> alpha, int i, AssemblyOptions opt = {}) {
    Assembler a(engine, chart, opt);
    return a.bifurcation_function(alpha, i);
}

}  // namespace pwavg::lsred
