#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"

namespace kslayers {

/// Piece labels of the glued approximation.
enum Piece : int { kU0 = 0, kU1 = 1, kU2 = 2, kU3 = 3, kU4 = 4, kNone = -1 };

/// Radial field sampled on a grid in [0, 1] with first and second derivatives.
struct Profile {
    std::vector<double> r;
    std::vector<double> u, d1, d2;
    std::vector<int> piece;

    std::size_t size() const { return r.size(); }
};

/// Grading data: geometric refinement toward r = 0 below scale a0 and toward each
/// center R_j below scale w_j.
struct GridSpec {
    double a0 = 1e-3;
    std::vector<double> centers;
    std::vector<double> widths;
    double c = 1.0;
};

/// Node density 1 + c/(a0 + r) + sum_j c/(w_j + |r - R_j|), uniform in the mapped variable.
/// The map does not depend on n, so n -> 2n - 1 nests the coarse grid.
inline std::vector<double> graded_grid(std::size_t n, const GridSpec& gs) {
    if (n < 3 || !(gs.a0 > 0.0) || !(gs.c > 0.0) || gs.centers.size() != gs.widths.size())
        throw DomainError("graded_grid: bad parameters");
    for (std::size_t j = 0; j < gs.centers.size(); ++j)
        if (!(gs.widths[j] > 0.0) || !(gs.centers[j] >= 0.0 && gs.centers[j] <= 1.0))
            throw DomainError("graded_grid: bad center or width");
    const double c = gs.c;
    auto F = [&](double r) {
        double f = r + c * std::log((gs.a0 + r) / gs.a0);
        for (std::size_t j = 0; j < gs.centers.size(); ++j) {
            const double d = r - gs.centers[j];
            f += c * std::copysign(std::log((gs.widths[j] + std::abs(d)) / gs.widths[j]), d);
        }
        return f;
    };
    auto rho = [&](double r) {
        double q = 1.0 + c / (gs.a0 + r);
        for (std::size_t j = 0; j < gs.centers.size(); ++j) q += c / (gs.widths[j] + std::abs(r - gs.centers[j]));
        return q;
    };
    const double f0 = F(0.0), total = F(1.0) - f0;
    std::vector<double> g(n);
    g[0] = 0.0;
    g[n - 1] = 1.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double target = f0 + total * double(i) / double(n - 1);
        double lo = g[i - 1], hi = 1.0, r = g[i - 1];
        for (int it = 0; it < 200; ++it) {
            const double f = F(r) - target;
            if (f > 0.0) hi = r; else lo = r;
            double rn = r - f / rho(r);
            if (!(rn > lo && rn < hi)) rn = 0.5 * (lo + hi);
            if (std::abs(rn - r) <= 1e-16 * std::max(1e-300, rn) || hi - lo <= 1e-17 * hi) { r = rn; break; }
            r = rn;
        }
        g[i] = r;
    }
    return g;
}

/// Grid graded toward 0 (scale a0) and toward 1 (scale a1).
inline std::vector<double> graded_grid(std::size_t n, double a0, double a1, double c = 1.0) {
    return graded_grid(n, GridSpec{a0, {1.0}, {a1}, c});
}

/// Moves the nearest interior node onto each breakpoint (or inserts it when the nearest
/// node is already pinned), keeping the grid strictly increasing.
inline std::vector<double> pin_points(std::vector<double> g, const std::vector<double>& pts) {
    std::vector<char> pinned(g.size(), 0);
    pinned.front() = pinned.back() = 1;
    for (double p : pts) {
        if (!(p > 0.0 && p < 1.0)) throw DomainError("pin_points: breakpoint outside (0,1)");
        auto it = std::lower_bound(g.begin(), g.end(), p);
        std::size_t j = static_cast<std::size_t>(it - g.begin());
        if (j < g.size() && g[j] == p) { pinned[j] = 1; continue; }
        std::size_t best = (j > 0 && (j == g.size() || p - g[j - 1] < g[j] - p)) ? j - 1 : j;
        if (!pinned[best]) {
            g[best] = p;
            pinned[best] = 1;
        } else {
            g.insert(g.begin() + static_cast<long>(j), p);
            pinned.insert(pinned.begin() + static_cast<long>(j), 1);
        }
    }
    return g;
}

/// Vertex-centred finite-volume discretisation of the radial Laplacian on [0, 1] with
/// zero-flux closures at both ends. M = diag(vol) (-Δ_h) is symmetric.
struct RadialFD {
    std::vector<double> r;      ///< nodes
    std::vector<double> h;      ///< h[i] = r[i+1] - r[i]
    std::vector<double> face;   ///< face[i] = midpoint of cell i (between nodes i and i+1)
    std::vector<double> vol;    ///< control-volume measure ∫ r dr over the dual cell

    explicit RadialFD(std::vector<double> nodes) : r(std::move(nodes)) {
        const std::size_t n = r.size();
        if (n < 3) throw DiscretizationError("RadialFD: need at least 3 nodes");
        for (std::size_t i = 0; i + 1 < n; ++i)
            if (!(r[i + 1] > r[i])) throw DiscretizationError("RadialFD: nodes must increase");
        if (r.front() != 0.0) throw DiscretizationError("RadialFD: first node must be r = 0");
        h.resize(n - 1);
        face.resize(n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            h[i] = r[i + 1] - r[i];
            face[i] = 0.5 * (r[i] + r[i + 1]);
        }
        vol.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double lo = i == 0 ? 0.0 : face[i - 1];
            const double hi = i + 1 == n ? r.back() : face[i];
            vol[i] = 0.5 * (hi * hi - lo * lo);
        }
    }

    std::size_t size() const { return r.size(); }

    /// -Δ_h as a tridiagonal matrix (Neumann at the outer node, regular at 0).
    Tridiag neg_laplacian() const {
        const std::size_t n = size();
        Tridiag t(n);
        for (std::size_t i = 0; i < n; ++i) {
            double d = 0.0;
            if (i > 0) {
                const double w = face[i - 1] / h[i - 1] / vol[i];
                t.sub[i - 1] = -w;
                d += w;
            }
            if (i + 1 < n) {
                const double w = face[i] / h[i] / vol[i];
                t.sup[i] = -w;
                d += w;
            }
            t.diag[i] = d;
        }
        return t;
    }

    /// Discrete -Δ applied to u with an imposed outward flux g = u'(1) at the last node.
    std::vector<double> apply_neg_laplacian(const std::vector<double>& u, double outer_flux = 0.0) const {
        auto y = neg_laplacian().apply(u);
        y.back() -= r.back() * outer_flux / vol.back();
        return y;
    }

    /// Three-point first and second derivatives on the nonuniform grid.
    void derivatives(const std::vector<double>& u, std::vector<double>& d1, std::vector<double>& d2) const {
        const std::size_t n = size();
        d1.assign(n, 0.0);
        d2.assign(n, 0.0);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double hm = h[i - 1], hp = h[i];
            d1[i] = (-hp / (hm * (hm + hp))) * u[i - 1] + ((hp - hm) / (hm * hp)) * u[i] +
                    (hm / (hp * (hm + hp))) * u[i + 1];
            d2[i] = 2.0 * (u[i - 1] / (hm * (hm + hp)) - u[i] / (hm * hp) + u[i + 1] / (hp * (hm + hp)));
        }
        auto one_sided = [&](std::size_t a, std::size_t b, std::size_t c, double& first, double& second) {
            // Quadratic through (r_a, r_b, r_c), derivatives at r_a.
            const double x0 = r[a], x1 = r[b], x2 = r[c];
            const double l0 = (2 * x0 - x1 - x2) / ((x0 - x1) * (x0 - x2));
            const double l1 = (x0 - x2) / ((x1 - x0) * (x1 - x2));
            const double l2 = (x0 - x1) / ((x2 - x0) * (x2 - x1));
            first = l0 * u[a] + l1 * u[b] + l2 * u[c];
            second = 2.0 * (u[a] / ((x0 - x1) * (x0 - x2)) + u[b] / ((x1 - x0) * (x1 - x2)) +
                            u[c] / ((x2 - x0) * (x2 - x1)));
        };
        one_sided(0, 1, 2, d1[0], d2[0]);
        one_sided(n - 1, n - 2, n - 3, d1[n - 1], d2[n - 1]);
    }
};

/// ∫ f 2πr dr by the trapezoid rule on [r_lo, r_hi] (nodes inside, linear interpolation at the ends).
inline double l1_disk(const std::vector<double>& r, const std::vector<double>& f, double r_lo = 0.0,
                      double r_hi = 1.0, bool absolute = true) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < r.size(); ++i) {
        const double a = std::max(r[i], r_lo), b = std::min(r[i + 1], r_hi);
        if (!(b > a)) continue;
        const double t0 = (a - r[i]) / (r[i + 1] - r[i]);
        const double t1 = (b - r[i]) / (r[i + 1] - r[i]);
        const double fa = f[i] + t0 * (f[i + 1] - f[i]);
        const double fb = f[i] + t1 * (f[i + 1] - f[i]);
        const double ga = (absolute ? std::abs(fa) : fa) * a;
        const double gb = (absolute ? std::abs(fb) : fb) * b;
        s += 0.5 * (ga + gb) * (b - a);
    }
    return 2.0 * std::numbers::pi * s;
}

/// Linear interpolation of (r, f) at x.
inline double interp(const std::vector<double>& r, const std::vector<double>& f, double x) {
    if (x <= r.front()) return f.front();
    if (x >= r.back()) return f.back();
    const auto it = std::upper_bound(r.begin(), r.end(), x);
    const std::size_t j = static_cast<std::size_t>(it - r.begin());
    const double t = (x - r[j - 1]) / (r[j] - r[j - 1]);
    return f[j - 1] + t * (f[j] - f[j - 1]);
}

/// Quintic smoothstep S(t) = 6t^5 - 15t^4 + 10t^3 with S' and S''.
inline void smoothstep(double t, double& s, double& ds, double& dds) {
    if (t <= 0.0) { s = 0.0; ds = 0.0; dds = 0.0; return; }
    if (t >= 1.0) { s = 1.0; ds = 0.0; dds = 0.0; return; }
    s = t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
    ds = 30.0 * t * t * (1.0 - t) * (1.0 - t);
    dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
}

/// Sup of |S'| and |S''| for the quintic smoothstep on [0,1].
inline constexpr double kSmoothstepD1 = 1.875;
inline constexpr double kSmoothstepD2 = 5.773502691896258;  // 10/√3

}  // namespace kslayers
