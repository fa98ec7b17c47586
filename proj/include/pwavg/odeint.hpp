#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "pwavg/linalg.hpp"
#include "pwavg/model.hpp"

// Adaptive Dormand-Prince 5(4) with PI step-size control and the method's
// dense-output interpolant.  Switching times are hit exactly by clamping the
// final step of each zone; no event detection is involved since the
// discontinuity set is time-defined.

namespace pwavg::odeint {

using linalg::Vec;

struct Tolerances {
    double rel = 1e-10;
    double abs = 1e-12;
};

inline Tolerances tolerances_of(const model::AnalysisOptions& opt) {
    return Tolerances{opt.rel_tol, opt.abs_tol};
}

using Rhs = std::function<void(double t, std::span<const double> y, std::span<double> dydt)>;

struct Trajectory {
    struct Step {
        double t0 = 0.0, t1 = 0.0;
        int zone = 0;
        std::array<std::vector<double>, 5> rcont;  // dense-output coefficients
    };

    int dim = 0;
    std::vector<std::pair<double, Vec>> samples;  // accepted step endpoints
    std::vector<Step> steps;                      // steps[i] spans samples[i] -> samples[i+1]
    double err_estimate = 0.0;                    // sum of accepted local error norms

    double initial_time() const { return samples.front().first; }
    double final_time() const { return samples.back().first; }
    const Vec& initial_state() const { return samples.front().second; }
    const Vec& final_state() const { return samples.back().second; }

    // Dense evaluation; returns stored states exactly at sample times.
    Vec eval(double t) const {
        for (const auto& [ts, ys] : samples)
            if (t == ts) return ys;
        if (t < initial_time() || t > final_time())
            throw PreconditionError("Trajectory::eval: time outside the integrated range");
        std::size_t lo = 0, hi = steps.size();
        while (lo + 1 < hi) {
            std::size_t mid = (lo + hi) / 2;
            if (steps[mid].t0 <= t) lo = mid;
            else hi = mid;
        }
        const Step& s = steps[lo];
        const double theta = (t - s.t0) / (s.t1 - s.t0);
        const double theta1 = 1.0 - theta;
        Vec y(static_cast<std::size_t>(dim));
        for (int d = 0; d < dim; ++d)
            y[d] = s.rcont[0][d] +
                   theta * (s.rcont[1][d] +
                            theta1 * (s.rcont[2][d] +
                                      theta * (s.rcont[3][d] + theta1 * s.rcont[4][d])));
        return y;
    }

    int zone_at(double t) const {
        for (const Step& s : steps)
            if (t >= s.t0 && t <= s.t1) return s.zone;
        throw PreconditionError("Trajectory::zone_at: time outside the integrated range");
    }

    // CSV rows: t, y_1..y_dim, zone (one row per accepted sample).
    void to_csv(std::ostream& os, int columns = -1) const {
        const int nc = columns < 0 ? dim : columns;
        os << "t";
        for (int c = 1; c <= nc; ++c) os << ",x_" << c;
        os << ",zone\n";
        for (std::size_t i = 0; i < samples.size(); ++i) {
            os << expr::detail::format_double(samples[i].first);
            for (int c = 0; c < nc; ++c)
                os << ',' << expr::detail::format_double(samples[i].second[c]);
            int zone = i < steps.size() ? steps[i].zone : steps.back().zone;
            os << ',' << zone << "\n";
        }
    }
};

namespace detail {

// Dormand-Prince coefficients (including the dense-output weights).
inline constexpr double a21 = 0.2, a31 = 3.0 / 40.0, a32 = 9.0 / 40.0, a41 = 44.0 / 45.0,
                        a42 = -56.0 / 15.0, a43 = 32.0 / 9.0, a51 = 19372.0 / 6561.0,
                        a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0,
                        a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                        a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0, a71 = 35.0 / 384.0,
                        a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0, a75 = -2187.0 / 6784.0,
                        a76 = 11.0 / 84.0;
inline constexpr double c2 = 0.2, c3 = 0.3, c4 = 0.8, c5 = 8.0 / 9.0;
inline constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                        e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
inline constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                        d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                        d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

inline constexpr double kSafe = 0.9, kFacl = 0.2, kFacr = 10.0, kBeta = 0.04;
inline constexpr long kMaxSteps = 2000000;

// One zone of integration appended onto `traj`; assumes traj ends at (t0, y0).
inline void integrate_segment(const Rhs& rhs, double t0, double t1, int zone, Tolerances tol,
                              Trajectory& traj) {
    const int dim = traj.dim;
    const std::size_t nd = static_cast<std::size_t>(dim);
    double t = t0;
    Vec y = traj.final_state();
    Vec k1(nd), k2(nd), k3(nd), k4(nd), k5(nd), k6(nd), k7(nd), ytmp(nd), ynew(nd), ee(nd);

    auto call = [&](double tt, const Vec& yy, Vec& out) {
        try {
            rhs(tt, yy, out);
        } catch (const EvalError& err) {
            throw IntegrationError(std::string("right-hand side failed: ") + err.what(), tt);
        }
        for (double v : out)
            if (!std::isfinite(v))
                throw IntegrationError("right-hand side produced a non-finite value", tt);
    };

    call(t, y, k1);
    double h = (t1 - t0) / 100.0;
    double facold = 1e-4;
    long nsteps = 0;
    bool rejected = false;

    while (t < t1) {
        if (++nsteps > kMaxSteps)
            throw IntegrationError("step limit exceeded", t);
        if (0.1 * std::abs(h) <= std::abs(t) * std::numeric_limits<double>::epsilon())
            throw IntegrationError("step size underflow", t);

        bool last = false;
        if (t + 1.01 * h - t1 > 0.0) {
            last = true;
            h = t1 - t;
        }

        for (int d = 0; d < dim; ++d) ytmp[d] = y[d] + h * a21 * k1[d];
        call(t + c2 * h, ytmp, k2);
        for (int d = 0; d < dim; ++d) ytmp[d] = y[d] + h * (a31 * k1[d] + a32 * k2[d]);
        call(t + c3 * h, ytmp, k3);
        for (int d = 0; d < dim; ++d)
            ytmp[d] = y[d] + h * (a41 * k1[d] + a42 * k2[d] + a43 * k3[d]);
        call(t + c4 * h, ytmp, k4);
        for (int d = 0; d < dim; ++d)
            ytmp[d] = y[d] + h * (a51 * k1[d] + a52 * k2[d] + a53 * k3[d] + a54 * k4[d]);
        call(t + c5 * h, ytmp, k5);
        for (int d = 0; d < dim; ++d)
            ytmp[d] = y[d] + h * (a61 * k1[d] + a62 * k2[d] + a63 * k3[d] + a64 * k4[d] +
                                  a65 * k5[d]);
        call(t + h, ytmp, k6);
        for (int d = 0; d < dim; ++d)
            ynew[d] = y[d] + h * (a71 * k1[d] + a73 * k3[d] + a74 * k4[d] + a75 * k5[d] +
                                  a76 * k6[d]);
        call(t + h, ynew, k7);

        double err = 0.0;
        for (int d = 0; d < dim; ++d) {
            ee[d] = h * (e1 * k1[d] + e3 * k3[d] + e4 * k4[d] + e5 * k5[d] + e6 * k6[d] +
                         e7 * k7[d]);
            double sc = tol.abs + tol.rel * std::max(std::abs(y[d]), std::abs(ynew[d]));
            double q = ee[d] / sc;
            err += q * q;
        }
        err = std::sqrt(err / dim);

        const double fac11 = std::pow(err, 0.2 - kBeta * 0.75);
        double fac = fac11 / std::pow(facold, kBeta);
        fac = std::max(1.0 / kFacr, std::min(1.0 / kFacl, fac / kSafe));
        double hnew = h / fac;

        if (err > 1.0) {
            h /= std::min(1.0 / kFacl, fac11 / kSafe);
            rejected = true;
            continue;
        }

        // accepted: record dense-output coefficients for this step
        Trajectory::Step step;
        step.t0 = t;
        step.t1 = last ? t1 : t + h;
        step.zone = zone;
        for (auto& rc : step.rcont) rc.resize(nd);
        for (int d = 0; d < dim; ++d) {
            double ydiff = ynew[d] - y[d];
            double bspl = h * k1[d] - ydiff;
            step.rcont[0][d] = y[d];
            step.rcont[1][d] = ydiff;
            step.rcont[2][d] = bspl;
            step.rcont[3][d] = ydiff - h * k7[d] - bspl;
            step.rcont[4][d] = h * (d1 * k1[d] + d3 * k3[d] + d4 * k4[d] + d5 * k5[d] +
                                    d6 * k6[d] + d7 * k7[d]);
        }
        traj.steps.push_back(std::move(step));
        traj.err_estimate += linalg::norm_inf(ee);

        facold = std::max(err, 1e-4);
        y = ynew;
        k1 = k7;
        if (rejected) {
            hnew = (t1 > t0 ? 1.0 : -1.0) * std::min(std::abs(hnew), std::abs(h));
            rejected = false;
        }
        t = last ? t1 : t + h;
        h = hnew;
        traj.samples.emplace_back(t, y);
    }
}

}  // namespace detail

// Integrates y' = rhs(t, y) over [t_start, t_end] as a single smooth zone.
inline Trajectory integrate_zone(const Rhs& rhs, double t_start, double t_end,
                                 std::span<const double> y0, Tolerances tol = {},
                                 int zone = 0) {
    if (!(t_start < t_end))
        throw PreconditionError("integrate_zone: t_start must precede t_end");
    Trajectory traj;
    traj.dim = static_cast<int>(y0.size());
    traj.samples.emplace_back(t_start, Vec(y0.begin(), y0.end()));
    detail::integrate_segment(rhs, t_start, t_end, zone, tol, traj);
    return traj;
}

// Zone-stitched integration over one period with a per-zone right-hand side;
// states are continuous across switching times (crossing concatenation).
inline Trajectory integrate_zoned(const model::PiecewiseSystem& sys, int dim,
                                  const std::function<Rhs(int)>& zone_rhs,
                                  std::span<const double> y0, Tolerances tol = {}) {
    Trajectory traj;
    traj.dim = dim;
    traj.samples.emplace_back(0.0, Vec(y0.begin(), y0.end()));
    for (int j = 0; j < sys.zone_count(); ++j)
        detail::integrate_segment(zone_rhs(j), sys.switch_times[j], sys.switch_times[j + 1], j,
                                  tol, traj);
    return traj;
}

namespace detail {

// Right-hand side of one zone evaluated from the compiled component tapes.
// layout of env: [t, x_1..x_m, eps, params...]
struct ZoneFieldRhs {
    const model::PiecewiseSystem* sys;
    const model::Zone* zone;
    double eps;
    enum class Mode { UnperturbedOnly, TruncatedSum, FullExpression } mode;
    mutable std::vector<double> env;

    void operator()(double t, std::span<const double> y, std::span<double> dydt) const {
        const int m = sys->m;
        env[0] = t;
        for (int c = 0; c < m; ++c) env[static_cast<std::size_t>(1 + c)] = y[c];
        env[static_cast<std::size_t>(sys->eps_slot())] = eps;
        switch (mode) {
            case Mode::UnperturbedOnly:
                for (int c = 0; c < m; ++c) dydt[c] = zone->rhs_compiled[c].eval(env);
                break;
            case Mode::FullExpression:
                for (int c = 0; c < m; ++c) dydt[c] = zone->full_compiled[c].eval(env);
                break;
            case Mode::TruncatedSum: {
                const int k = sys->order;
                for (int c = 0; c < m; ++c) {
                    double acc = zone->rhs_compiled[static_cast<std::size_t>(k * m + c)].eval(env);
                    for (int i = k - 1; i >= 0; --i)
                        acc = zone->rhs_compiled[static_cast<std::size_t>(i * m + c)].eval(env) +
                              eps * acc;
                    if (zone->has_remainder())
                        acc += std::pow(eps, k + 1) *
                               zone->remainder_compiled[static_cast<std::size_t>(c)].eval(env);
                    dydt[c] = acc;
                }
                break;
            }
        }
    }
};

inline Rhs make_zone_rhs(const model::PiecewiseSystem& sys, int zone, double eps,
                         ZoneFieldRhs::Mode mode) {
    return ZoneFieldRhs{&sys, &sys.zones[static_cast<std::size_t>(zone)], eps, mode,
                        sys.make_env()};
}

}  // namespace detail

// Unperturbed flow x' = F_0(t, x) over [0, T].
inline Trajectory propagate_unperturbed(const model::PiecewiseSystem& sys,
                                        std::span<const double> z, Tolerances tol = {}) {
    return integrate_zoned(
        sys, sys.m,
        [&](int j) {
            return detail::make_zone_rhs(sys, j, 0.0, detail::ZoneFieldRhs::Mode::UnperturbedOnly);
        },
        z, tol);
}

// Full flow over [0, T]: the exact eps-dependent field when the zone supplies
// one, otherwise the truncated sum plus any remainder term.  eps = 0 takes
// the order-0 path and reproduces propagate_unperturbed exactly.
inline Trajectory propagate_full(const model::PiecewiseSystem& sys, std::span<const double> z,
                                 double eps, Tolerances tol = {}, double eps_bound = 0.1) {
    if (std::abs(eps) > eps_bound)
        throw PreconditionError("propagate_full: |eps| exceeds the configured bound");
    return integrate_zoned(
        sys, sys.m,
        [&](int j) {
            auto mode = detail::ZoneFieldRhs::Mode::UnperturbedOnly;
            if (eps != 0.0)
                mode = sys.zones[static_cast<std::size_t>(j)].has_full()
                           ? detail::ZoneFieldRhs::Mode::FullExpression
                           : detail::ZoneFieldRhs::Mode::TruncatedSum;
            return detail::make_zone_rhs(sys, j, eps, mode);
        },
        z, tol);
}

}  // namespace pwavg::odeint
