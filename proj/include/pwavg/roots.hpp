#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pwavg/lsreduction.hpp"

// Zero location on the parameter box V: coarse grid scan, damped Newton
// refinement, and simplicity certification via |det Df| at the refined point.

namespace pwavg::roots {

using linalg::Mat;
using linalg::Vec;

using VecFn = std::function<Vec(std::span<const double>)>;
using JacFn = std::function<Mat(std::span<const double>)>;

struct ZeroCertificate {
    enum class Status { Certified, Degenerate, Unconverged };

    Vec alpha_star;
    double residual = std::numeric_limits<double>::infinity();
    Mat jacobian;
    double det_jacobian = 0.0;
    double condition_estimate = std::numeric_limits<double>::infinity();
    Status status = Status::Unconverged;
    int iterations = 0;
    std::string note;

    bool certified() const { return status == Status::Certified; }
};

inline const char* to_string(ZeroCertificate::Status s) {
    switch (s) {
        case ZeroCertificate::Status::Certified: return "certified";
        case ZeroCertificate::Status::Degenerate: return "degenerate";
        case ZeroCertificate::Status::Unconverged: return "unconverged";
    }
    return "?";
}

struct ScanOptions {
    // a node is a candidate when it is a local minimum of |f| and below
    // max(threshold_rel * max_grid |f|, threshold_abs)
    double threshold_rel = 0.05;
    double threshold_abs = 1e-5;
};

// Candidates for zeros of f on the box: sign-change bracket midpoints for
// d = 1, local minima of |f|_inf below a coarse threshold for d >= 2.
// Deterministic lexicographic ordering.
inline std::vector<Vec> scan_grid(const VecFn& f, const Vec& lower, const Vec& upper,
                                  int resolution, ScanOptions opt = {}) {
    const int d = static_cast<int>(lower.size());
    if (resolution < 2) throw PreconditionError("scan_grid: resolution must be >= 2");

    auto node = [&](std::span<const int> idx) {
        Vec alpha(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i)
            alpha[i] = lower[i] + (upper[i] - lower[i]) * idx[i] / (resolution - 1);
        return alpha;
    };

    std::vector<Vec> candidates;
    if (d == 1) {
        double prev_val = 0.0;
        Vec prev_alpha;
        for (int i = 0; i < resolution; ++i) {
            std::array<int, 1> idx = {i};
            Vec alpha = node(idx);
            double val = f(alpha)[0];
            if (i > 0 && ((prev_val < 0.0 && val > 0.0) || (prev_val > 0.0 && val < 0.0)))
                candidates.push_back(Vec{0.5 * (prev_alpha[0] + alpha[0])});
            else if (val == 0.0)
                candidates.push_back(alpha);
            prev_val = val;
            prev_alpha = alpha;
        }
        return candidates;
    }

    // dense lattice of |f|_inf values
    std::size_t total = 1;
    for (int i = 0; i < d; ++i) total *= static_cast<std::size_t>(resolution);
    std::vector<double> norm(total);
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    double max_norm = 0.0;
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rest = flat;
        for (int i = d - 1; i >= 0; --i) {
            idx[i] = static_cast<int>(rest % static_cast<std::size_t>(resolution));
            rest /= static_cast<std::size_t>(resolution);
        }
        norm[flat] = linalg::norm_inf(f(node(idx)));
        max_norm = std::max(max_norm, norm[flat]);
    }
    const double threshold = std::max(opt.threshold_rel * max_norm, opt.threshold_abs);

    for (std::size_t flat = 0; flat < total; ++flat) {
        if (norm[flat] > threshold) continue;
        std::size_t rest = flat;
        for (int i = d - 1; i >= 0; --i) {
            idx[i] = static_cast<int>(rest % static_cast<std::size_t>(resolution));
            rest /= static_cast<std::size_t>(resolution);
        }
        bool is_min = true;
        std::size_t stride = 1;
        for (int i = d - 1; i >= 0 && is_min; --i) {
            if (idx[i] > 0 && norm[flat - stride] < norm[flat]) is_min = false;
            if (idx[i] + 1 < resolution && norm[flat + stride] < norm[flat]) is_min = false;
            stride *= static_cast<std::size_t>(resolution);
        }
        if (is_min) candidates.push_back(node(idx));
    }
    return candidates;
}

struct NewtonOptions {
    double tol = 1e-6;              // |f|_inf target
    int max_iter = 30;
    double simple_zero_floor = 1e-6;
    lsred::BDerivativeOptions fd;   // used when no Jacobian callable is given
};

// Damped Newton from alpha0, constrained to the closed box.
inline ZeroCertificate newton_refine(const VecFn& f, const JacFn* jac, std::span<const double> a0,
                                     const Vec& lower, const Vec& upper, NewtonOptions opt = {}) {
    const int d = static_cast<int>(lower.size());
    ZeroCertificate cert;
    cert.alpha_star.assign(a0.begin(), a0.end());

    auto inside = [&](const Vec& a) {
        for (int i = 0; i < d; ++i) {
            double margin = 1e-12 * (1.0 + std::abs(upper[i]) + std::abs(lower[i]));
            if (a[i] < lower[i] - margin || a[i] > upper[i] + margin) return false;
        }
        return true;
    };
    auto jacobian_at = [&](const Vec& a) -> Mat {
        if (jac) return (*jac)(a);
        averaging::DerivTensor T = lsred::b_derivative(f, a, 1, d, opt.fd);
        Mat J(d, d);
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < d; ++c) J(r, c) = T.a[static_cast<std::size_t>(r) * d + c];
        return J;
    };

    if (!inside(cert.alpha_star)) {
        cert.note = "initial point outside the box";
        return cert;
    }

    Vec fx = f(cert.alpha_star);
    double fnorm = linalg::norm_inf(fx);
    for (cert.iterations = 0; cert.iterations < opt.max_iter; ++cert.iterations) {
        if (fnorm < opt.tol) break;
        Mat J = jacobian_at(cert.alpha_star);
        linalg::Lu lu(J);
        if (lu.singular()) {
            cert.note = "singular Jacobian during iteration";
            cert.residual = fnorm;
            return cert;
        }
        Vec step = lu.solve(fx);
        for (int i = 0; i < d; ++i) step[i] = -step[i];

        double lambda = 1.0;
        bool advanced = false;
        for (int halving = 0; halving < 9; ++halving, lambda *= 0.5) {
            Vec trial(static_cast<std::size_t>(d));
            for (int i = 0; i < d; ++i) trial[i] = cert.alpha_star[i] + lambda * step[i];
            if (!inside(trial)) continue;
            Vec ftrial = f(trial);
            double tnorm = linalg::norm_inf(ftrial);
            if (tnorm < fnorm) {
                cert.alpha_star = std::move(trial);
                fx = std::move(ftrial);
                fnorm = tnorm;
                advanced = true;
                break;
            }
        }
        if (!advanced) {
            cert.note = "line search failed (divergence or box boundary)";
            cert.residual = fnorm;
            return cert;
        }
    }
    cert.residual = fnorm;
    if (fnorm >= opt.tol) {
        cert.note = "no convergence within the iteration budget";
        return cert;
    }

    cert.jacobian = jacobian_at(cert.alpha_star);
    linalg::Lu lu(cert.jacobian);
    cert.det_jacobian = lu.singular() ? 0.0 : lu.det();
    cert.condition_estimate = lu.singular() ? std::numeric_limits<double>::infinity()
                                            : cert.jacobian.norm1() * lu.inverse().norm1();
    cert.status = std::abs(cert.det_jacobian) > opt.simple_zero_floor
                      ? ZeroCertificate::Status::Certified
                      : ZeroCertificate::Status::Degenerate;
    return cert;
}

// Scan, refine, and deduplicate (zeros within 1e-6 merge, keeping the smaller
// residual).
inline std::vector<ZeroCertificate> find_zeros(const VecFn& f, const Vec& lower, const Vec& upper,
                                               int resolution, NewtonOptions nopt = {},
                                               ScanOptions sopt = {}) {
    std::vector<ZeroCertificate> certs;
    for (const Vec& cand : scan_grid(f, lower, upper, resolution, sopt))
        certs.push_back(newton_refine(f, nullptr, cand, lower, upper, nopt));

    std::vector<ZeroCertificate> merged;
    for (ZeroCertificate& c : certs) {
        bool absorbed = false;
        for (ZeroCertificate& kept : merged) {
            double dist = 0.0;
            for (std::size_t i = 0; i < kept.alpha_star.size(); ++i)
                dist = std::max(dist, std::abs(kept.alpha_star[i] - c.alpha_star[i]));
            if (dist < 1e-6) {
                if (c.residual < kept.residual) kept = std::move(c);
                absorbed = true;
                break;
            }
        }
        if (!absorbed) merged.push_back(std::move(c));
    }
    std::sort(merged.begin(), merged.end(), [](const ZeroCertificate& a, const ZeroCertificate& b) {
        return std::lexicographical_compare(a.alpha_star.begin(), a.alpha_star.end(),
                                            b.alpha_star.begin(), b.alpha_star.end());
    });
    return merged;
}

}  // namespace pwavg::roots
