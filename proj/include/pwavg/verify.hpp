#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pwavg/model.hpp"
#include "pwavg/odeint.hpp"

// Independent validation of a certified zero: locate the actual periodic
// orbit of the full eps-system near z_alpha* with a Newton iteration on the
// time-T displacement, sweep eps downward, and fit the convergence order of
// |z(eps) - z_alpha*|.

namespace pwavg::verify {

using linalg::Mat;
using linalg::Vec;

struct VerifyOptions {
    odeint::Tolerances tol;
    double eps_bound = 0.1;
    double verify_tol = 1e-10;  // |h|_inf target for located orbits
    int max_iter = 30;
    double slope_low = 0.8;
    double slope_high = 1.3;
};

inline VerifyOptions verify_options_of(const model::AnalysisOptions& opt) {
    VerifyOptions v;
    v.tol = odeint::tolerances_of(opt);
    v.eps_bound = opt.eps_bound;
    v.verify_tol = opt.verify_tol;
    return v;
}

// h(z, eps) = x(T, z, eps) - z.
inline Vec displacement(const model::PiecewiseSystem& sys, std::span<const double> z, double eps,
                        const VerifyOptions& opt = {}) {
    odeint::Trajectory traj = odeint::propagate_full(sys, z, eps, opt.tol, opt.eps_bound);
    const Vec& xT = traj.final_state();
    Vec h(static_cast<std::size_t>(sys.m));
    for (int c = 0; c < sys.m; ++c) h[c] = xT[c] - z[c];
    return h;
}

// Fixed point of the time-T map near z_guess, by damped Newton on h with a
// central-difference Jacobian.  eps = 0 is refused: on the periodic manifold
// the Jacobian is singular along the manifold directions.
inline Vec locate_periodic_orbit(const model::PiecewiseSystem& sys, std::span<const double> z_guess,
                                 double eps, const VerifyOptions& opt = {}) {
    if (eps == 0.0)
        throw PreconditionError("locate_periodic_orbit: eps must be nonzero");
    const int m = sys.m;
    Vec z(z_guess.begin(), z_guess.end());
    Vec h = displacement(sys, z, eps, opt);
    double hnorm = linalg::norm_inf(h);
    for (int iter = 0; iter < opt.max_iter; ++iter) {
        if (hnorm < opt.verify_tol) return z;
        Mat J(m, m);
        for (int j = 0; j < m; ++j) {
            const double dz = 1e-6 * (1.0 + std::abs(z[j]));
            Vec zp = z, zm = z;
            zp[j] += dz;
            zm[j] -= dz;
            Vec hp = displacement(sys, zp, eps, opt);
            Vec hm = displacement(sys, zm, eps, opt);
            for (int r = 0; r < m; ++r) J(r, j) = (hp[r] - hm[r]) / (2.0 * dz);
        }
        linalg::Lu lu(J);
        if (lu.singular())
            throw Error("locate_periodic_orbit: singular displacement Jacobian");
        Vec step = lu.solve(h);
        double lambda = 1.0;
        bool advanced = false;
        for (int halving = 0; halving < 9; ++halving, lambda *= 0.5) {
            Vec trial(static_cast<std::size_t>(m));
            for (int c = 0; c < m; ++c) trial[c] = z[c] - lambda * step[c];
            Vec htrial = displacement(sys, trial, eps, opt);
            double tnorm = linalg::norm_inf(htrial);
            if (tnorm < hnorm) {
                z = std::move(trial);
                h = std::move(htrial);
                hnorm = tnorm;
                advanced = true;
                break;
            }
        }
        if (!advanced) break;
    }
    if (hnorm < opt.verify_tol) return z;
    throw Error("locate_periodic_orbit: no convergence (|h| = " + std::to_string(hnorm) + ")");
}

struct VerificationRecord {
    Vec alpha_star;
    Vec z_alpha;
    std::vector<double> eps_list;       // descending
    std::vector<Vec> z_eps;             // located fixed points (may be partial)
    std::vector<double> residuals;      // |h(z(eps), eps)|_inf
    std::vector<double> distances;      // |z(eps) - z_alpha*|_2
    double slope = std::numeric_limits<double>::quiet_NaN();
    bool slope_valid = false;
    bool orbit_eps_independent = false; // every distance below 10 * verify_tol
    bool passed = false;
    std::string failure;
};

// Sweeps eps from largest to smallest, warm-starting each Newton run from the
// previous orbit, and fits the log-log slope of distance against eps.
// Passes when the slope sits in the O(eps) band, or when the located orbit is
// independent of eps to resolution.
inline VerificationRecord convergence_order(const model::PiecewiseSystem& sys,
                                            const model::ManifoldChart& chart,
                                            std::span<const double> alpha_star,
                                            std::vector<double> eps_list,
                                            const VerifyOptions& opt = {}) {
    if (eps_list.size() < 3)
        throw PreconditionError("convergence_order: need at least 3 eps values");
    for (double e : eps_list)
        if (!(e > 0.0)) throw PreconditionError("convergence_order: eps values must be positive");
    std::sort(eps_list.begin(), eps_list.end(), std::greater<double>());

    VerificationRecord rec;
    rec.alpha_star.assign(alpha_star.begin(), alpha_star.end());
    rec.z_alpha = chart.point(alpha_star, sys.m);
    rec.eps_list = eps_list;

    Vec guess = rec.z_alpha;
    for (double eps : eps_list) {
        try {
            Vec z = locate_periodic_orbit(sys, guess, eps, opt);
            Vec h = displacement(sys, z, eps, opt);
            rec.residuals.push_back(linalg::norm_inf(h));
            double dist = 0.0;
            for (int c = 0; c < sys.m; ++c) {
                double dd = z[c] - rec.z_alpha[c];
                dist += dd * dd;
            }
            rec.distances.push_back(std::sqrt(dist));
            guess = z;
            rec.z_eps.push_back(std::move(z));
        } catch (const Error& err) {
            rec.failure = err.what();
            return rec;
        }
    }

    rec.orbit_eps_independent = true;
    for (double dist : rec.distances)
        if (dist >= 10.0 * opt.verify_tol) rec.orbit_eps_independent = false;

    // least-squares slope over the strictly positive distances
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t i = 0; i < rec.distances.size(); ++i) {
        if (rec.distances[i] <= 0.0) continue;
        double lx = std::log(rec.eps_list[i]);
        double ly = std::log(rec.distances[i]);
        sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
        ++n;
    }
    if (n >= 2) {
        rec.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        rec.slope_valid = true;
    }
    rec.passed = rec.orbit_eps_independent ||
                 (rec.slope_valid && rec.slope >= opt.slope_low && rec.slope <= opt.slope_high);
    return rec;
}

}  // namespace pwavg::verify
