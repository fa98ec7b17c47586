#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "pwavg/errors.hpp"

// Small dense vectors and matrices.  State dimensions here are tiny (m <= 6),
// so everything is plain loops over contiguous storage; no BLAS.

namespace pwavg::linalg {

using Vec = std::vector<double>;

inline double norm_inf(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

inline double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline Vec operator+(const Vec& a, const Vec& b) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

inline Vec operator-(const Vec& a, const Vec& b) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

inline Vec operator*(double s, const Vec& a) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = s * a[i];
    return r;
}

class Mat {
public:
    Mat() = default;
    Mat(int rows, int cols) : rows_(rows), cols_(cols), a_(static_cast<std::size_t>(rows) * cols, 0.0) {}

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }

    double& operator()(int r, int c) { return a_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return a_[static_cast<std::size_t>(r) * cols_ + c]; }

    double* data() { return a_.data(); }
    const double* data() const { return a_.data(); }

    Vec mul(std::span<const double> x) const {
        Vec y(rows_, 0.0);
        for (int i = 0; i < rows_; ++i) {
            double s = 0.0;
            for (int j = 0; j < cols_; ++j) s += (*this)(i, j) * x[j];
            y[i] = s;
        }
        return y;
    }

    Mat mul(const Mat& b) const {
        Mat c(rows_, b.cols_);
        for (int i = 0; i < rows_; ++i)
            for (int k = 0; k < cols_; ++k) {
                double aik = (*this)(i, k);
                for (int j = 0; j < b.cols_; ++j) c(i, j) += aik * b(k, j);
            }
        return c;
    }

    Mat block(int r0, int c0, int nr, int nc) const {
        Mat b(nr, nc);
        for (int i = 0; i < nr; ++i)
            for (int j = 0; j < nc; ++j) b(i, j) = (*this)(r0 + i, c0 + j);
        return b;
    }

    double norm1() const {
        double m = 0.0;
        for (int j = 0; j < cols_; ++j) {
            double s = 0.0;
            for (int i = 0; i < rows_; ++i) s += std::abs((*this)(i, j));
            m = std::max(m, s);
        }
        return m;
    }

    bool operator==(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_ && a_ == o.a_; }

private:
    int rows_ = 0, cols_ = 0;
    std::vector<double> a_;
};

// LU factorization with partial pivoting.
class Lu {
public:
    explicit Lu(Mat a) : lu_(std::move(a)), perm_(lu_.rows()) {
        const int n = lu_.rows();
        if (lu_.cols() != n) throw Error("Lu: matrix must be square");
        for (int i = 0; i < n; ++i) perm_[i] = i;
        for (int col = 0; col < n; ++col) {
            int piv = col;
            double best = std::abs(lu_(col, col));
            for (int r = col + 1; r < n; ++r) {
                double v = std::abs(lu_(r, col));
                if (v > best) { best = v; piv = r; }
            }
            if (piv != col) {
                for (int j = 0; j < n; ++j) std::swap(lu_(col, j), lu_(piv, j));
                std::swap(perm_[col], perm_[piv]);
                sign_ = -sign_;
            }
            const double d = lu_(col, col);
            if (d == 0.0) { singular_ = true; continue; }
            for (int r = col + 1; r < n; ++r) {
                double f = lu_(r, col) / d;
                lu_(r, col) = f;
                for (int j = col + 1; j < n; ++j) lu_(r, j) -= f * lu_(col, j);
            }
        }
    }

    bool singular() const { return singular_; }

    double det() const {
        double d = sign_;
        for (int i = 0; i < lu_.rows(); ++i) d *= lu_(i, i);
        return d;
    }

    Vec solve(std::span<const double> b) const {
        if (singular_) throw SingularError("Lu::solve: singular matrix");
        const int n = lu_.rows();
        Vec x(n);
        for (int i = 0; i < n; ++i) x[i] = b[perm_[i]];
        for (int i = 1; i < n; ++i)
            for (int j = 0; j < i; ++j) x[i] -= lu_(i, j) * x[j];
        for (int i = n - 1; i >= 0; --i) {
            for (int j = i + 1; j < n; ++j) x[i] -= lu_(i, j) * x[j];
            x[i] /= lu_(i, i);
        }
        return x;
    }

    Mat solve(const Mat& b) const {
        Mat x(b.rows(), b.cols());
        Vec col(b.rows());
        for (int j = 0; j < b.cols(); ++j) {
            for (int i = 0; i < b.rows(); ++i) col[i] = b(i, j);
            Vec s = solve(col);
            for (int i = 0; i < b.rows(); ++i) x(i, j) = s[i];
        }
        return x;
    }

    Mat inverse() const { return solve(Mat::identity(lu_.rows())); }

private:
    Mat lu_;
    std::vector<int> perm_;
    int sign_ = 1;
    bool singular_ = false;
};

// 1-norm condition estimate via the explicit inverse; fine at these sizes.
inline double cond1(const Mat& a) {
    Lu lu(a);
    if (lu.singular()) return std::numeric_limits<double>::infinity();
    return a.norm1() * lu.inverse().norm1();
}

}  // namespace pwavg::linalg
