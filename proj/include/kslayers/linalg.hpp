#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "errors.hpp"

namespace kslayers {

/// Small dense row-major matrix.
struct DenseMatrix {
    std::size_t n = 0;
    std::vector<double> a;

    DenseMatrix() = default;
    explicit DenseMatrix(std::size_t size) : n(size), a(size * size, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

/// LU factorization with partial pivoting.
class DenseLU {
public:
    explicit DenseLU(DenseMatrix m) : lu_(std::move(m)), piv_(lu_.n) {
        const std::size_t n = lu_.n;
        for (std::size_t i = 0; i < n; ++i) piv_[i] = i;
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t p = k;
            for (std::size_t i = k + 1; i < n; ++i)
                if (std::abs(lu_(i, k)) > std::abs(lu_(p, k))) p = i;
            if (p != k) {
                for (std::size_t j = 0; j < n; ++j) std::swap(lu_(k, j), lu_(p, j));
                std::swap(piv_[k], piv_[p]);
                sign_ = -sign_;
            }
            const double d = lu_(k, k);
            if (d == 0.0) {
                singular_ = true;
                continue;
            }
            for (std::size_t i = k + 1; i < n; ++i) {
                const double f = lu_(i, k) / d;
                lu_(i, k) = f;
                for (std::size_t j = k + 1; j < n; ++j) lu_(i, j) -= f * lu_(k, j);
            }
        }
    }

    bool singular() const { return singular_; }

    double det() const {
        double d = sign_;
        for (std::size_t i = 0; i < lu_.n; ++i) d *= lu_(i, i);
        return d;
    }

    std::vector<double> solve(const std::vector<double>& b) const {
        if (singular_) throw ConditioningError("DenseLU: singular matrix", INFINITY);
        const std::size_t n = lu_.n;
        std::vector<double> x(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = b[piv_[i]];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < i; ++j) x[i] -= lu_(i, j) * x[j];
        for (std::size_t i = n; i-- > 0;) {
            for (std::size_t j = i + 1; j < n; ++j) x[i] -= lu_(i, j) * x[j];
            x[i] /= lu_(i, i);
        }
        return x;
    }

private:
    DenseMatrix lu_;
    std::vector<std::size_t> piv_;
    double sign_ = 1.0;
    bool singular_ = false;
};

inline double norm1(const DenseMatrix& m) {
    double best = 0.0;
    for (std::size_t j = 0; j < m.n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m.n; ++i) s += std::abs(m(i, j));
        best = std::max(best, s);
    }
    return best;
}

/// 1-norm condition number via the explicit inverse (small matrices only).
inline double condition1(const DenseMatrix& m) {
    DenseLU lu(m);
    if (lu.singular()) return INFINITY;
    DenseMatrix inv(m.n);
    for (std::size_t j = 0; j < m.n; ++j) {
        std::vector<double> e(m.n, 0.0);
        e[j] = 1.0;
        const auto col = lu.solve(e);
        for (std::size_t i = 0; i < m.n; ++i) inv(i, j) = col[i];
    }
    return norm1(m) * norm1(inv);
}

/// Tridiagonal matrix: sub[i] = A(i+1,i), diag[i] = A(i,i), sup[i] = A(i,i+1).
struct Tridiag {
    std::vector<double> sub, diag, sup;

    Tridiag() = default;
    explicit Tridiag(std::size_t n) : sub(n ? n - 1 : 0, 0.0), diag(n, 0.0), sup(n ? n - 1 : 0, 0.0) {}

    std::size_t size() const { return diag.size(); }

    std::vector<double> apply(const std::vector<double>& x) const {
        const std::size_t n = size();
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = diag[i] * x[i];
            if (i > 0) s += sub[i - 1] * x[i - 1];
            if (i + 1 < n) s += sup[i] * x[i + 1];
            y[i] = s;
        }
        return y;
    }

    std::vector<double> apply_transpose(const std::vector<double>& x) const {
        const std::size_t n = size();
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = diag[i] * x[i];
            if (i > 0) s += sup[i - 1] * x[i - 1];
            if (i + 1 < n) s += sub[i] * x[i + 1];
            y[i] = s;
        }
        return y;
    }

    Tridiag transpose() const {
        Tridiag t = *this;
        std::swap(t.sub, t.sup);
        return t;
    }
};

/// Determinant by the three-term recurrence f_i = a_ii f_{i-1} - a_{i,i-1} a_{i-1,i} f_{i-2}.
inline double tridiag_det(const Tridiag& t) {
    double fm2 = 1.0, fm1 = 1.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double f = (i == 0) ? t.diag[0] : t.diag[i] * fm1 - t.sub[i - 1] * t.sup[i - 1] * fm2;
        fm2 = fm1;
        fm1 = f;
    }
    return fm1;
}

/// Tridiagonal LU with partial pivoting (row interchanges, two superdiagonals in U).
class TridiagLU {
public:
    explicit TridiagLU(const Tridiag& t)
        : n_(t.size()), dl_(t.sub), d_(t.diag), du_(t.sup), du2_(n_ > 2 ? n_ - 2 : 0, 0.0), ipiv_(n_) {
        for (std::size_t i = 0; i < n_; ++i) ipiv_[i] = i;
        for (std::size_t i = 0; i + 1 < n_; ++i) {
            if (std::abs(d_[i]) >= std::abs(dl_[i])) {
                if (d_[i] != 0.0) {
                    const double f = dl_[i] / d_[i];
                    dl_[i] = f;
                    d_[i + 1] -= f * du_[i];
                }
            } else {
                const double f = d_[i] / dl_[i];
                d_[i] = dl_[i];
                dl_[i] = f;
                const double tmp = du_[i];
                du_[i] = d_[i + 1];
                d_[i + 1] = tmp - f * d_[i + 1];
                if (i + 2 < n_) {
                    du2_[i] = du_[i + 1];
                    du_[i + 1] = -f * du_[i + 1];
                }
                ipiv_[i] = i + 1;
                sign_ = -sign_;
            }
        }
        double dmax = 0.0;
        for (double v : d_) dmax = std::max(dmax, std::abs(v));
        for (double v : d_) min_pivot_ = std::min(min_pivot_, std::abs(v));
        max_pivot_ = dmax;
    }

    bool singular() const { return min_pivot_ == 0.0; }
    double min_pivot() const { return min_pivot_; }
    double max_pivot() const { return max_pivot_; }

    double det() const {
        double s = sign_;
        for (double v : d_) s *= v;
        return s;
    }

    std::vector<double> solve(std::vector<double> b) const {
        if (singular()) throw ConditioningError("TridiagLU: zero pivot", INFINITY);
        for (std::size_t i = 0; i + 1 < n_; ++i) {
            if (ipiv_[i] == i) {
                b[i + 1] -= dl_[i] * b[i];
            } else {
                const double tmp = b[i] - dl_[i] * b[i + 1];
                b[i] = b[i + 1];
                b[i + 1] = tmp;
            }
        }
        b[n_ - 1] /= d_[n_ - 1];
        if (n_ > 1) b[n_ - 2] = (b[n_ - 2] - du_[n_ - 2] * b[n_ - 1]) / d_[n_ - 2];
        if (n_ > 2)
            for (std::size_t i = n_ - 2; i-- > 0;)
                b[i] = (b[i] - du_[i] * b[i + 1] - du2_[i] * b[i + 2]) / d_[i];
        return b;
    }

private:
    std::size_t n_;
    std::vector<double> dl_, d_, du_, du2_;
    std::vector<std::size_t> ipiv_;
    double sign_ = 1.0;
    double min_pivot_ = INFINITY;
    double max_pivot_ = 0.0;
};

/// Solves [[T, f], [g^T, d]] [x; y] = [r; s] by block elimination with one refinement sweep.
inline void bordered_solve(const Tridiag& t, const std::vector<double>& f, const std::vector<double>& g,
                           double d, const std::vector<double>& r, double s, std::vector<double>& x,
                           double& y) {
    const TridiagLU lu(t);
    const auto x2 = lu.solve(f);
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
        return acc;
    };
    const double schur = d - dot(g, x2);
    if (schur == 0.0 || !std::isfinite(schur)) throw ConditioningError("bordered_solve: singular border", INFINITY);
    auto once = [&](const std::vector<double>& rr, double ss, std::vector<double>& xx, double& yy) {
        const auto x1 = lu.solve(rr);
        yy = (ss - dot(g, x1)) / schur;
        xx.resize(rr.size());
        for (std::size_t i = 0; i < rr.size(); ++i) xx[i] = x1[i] - yy * x2[i];
    };
    once(r, s, x, y);
    // Refinement against the true residual.
    auto tx = t.apply(x);
    std::vector<double> rr(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) rr[i] = r[i] - tx[i] - f[i] * y;
    const double rs = s - dot(g, x) - d * y;
    std::vector<double> dx;
    double dy;
    once(rr, rs, dx, dy);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += dx[i];
    y += dy;
}

}  // namespace kslayers
