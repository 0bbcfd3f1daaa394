#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"
#include "greens.hpp"
#include "linalg.hpp"
#include "profile.hpp"
#include "specfun.hpp"

namespace kslayers {

// ---------------------------------------------------------------------------------------------
// Radial Neumann eigenvalues of -Δ + Id on the unit disk.

/// m-th positive zero of J1 (m ≥ 1) by bracketing on a 0.05 grid and bisection.
inline double bessel_j1_zero(int m) {
    if (m < 1) throw DomainError("bessel_j1_zero: index must be >= 1");
    double j0, j1;
    double x = 0.5;
    bessel_j01(x, j0, j1);
    double prev = j1;
    int found = 0;
    for (;;) {
        const double xn = x + 0.05;
        bessel_j01(xn, j0, j1);
        if (prev * j1 <= 0.0 && ++found == m) {
            double lo = x, hi = xn, flo = prev;
            for (int it = 0; it < 200 && hi - lo > 1e-16 * hi; ++it) {
                const double mid = 0.5 * (lo + hi);
                double a, b;
                bessel_j01(mid, a, b);
                if (b * flo > 0.0) {
                    lo = mid;
                    flo = b;
                } else {
                    hi = mid;
                }
            }
            return 0.5 * (lo + hi);
        }
        prev = j1;
        x = xn;
    }
}

/// λ_1 = 1 and λ_i = 1 + j_{1,i-1}².
inline std::vector<double> radial_eigenvalues(int count) {
    if (count < 1) throw DomainError("radial_eigenvalues: count must be >= 1");
    std::vector<double> ev{1.0};
    for (int i = 2; i <= count; ++i) {
        const double j = bessel_j1_zero(i - 1);
        ev.push_back(1.0 + j * j);
    }
    return ev;
}

/// Eigenfunction J0(j_{1,i-1} r) of the i-th radial eigenvalue (i ≥ 2), normalized to J0(0) = 1.
inline std::vector<double> radial_eigenfunction(int i, const std::vector<double>& r) {
    if (i < 1) throw DomainError("radial_eigenfunction: index must be >= 1");
    std::vector<double> f(r.size(), 1.0);
    if (i == 1) return f;
    const double j = bessel_j1_zero(i - 1);
    for (std::size_t k = 0; k < r.size(); ++k) {
        double a, b;
        bessel_j01(j * r[k], a, b);
        f[k] = a;
    }
    return f;
}

// ---------------------------------------------------------------------------------------------
// Discrete problem -Δ_h u + u = f(u; p) with zero flux at r = 1.

enum class Form {
    keller_segel,  ///< f = λe^u, parameter p = ln λ
    mu_form,       ///< f = e^{μ(u-1)}, parameter p = μ
};

struct Source {
    Form form = Form::keller_segel;
    double p = 0.0;

    double param_value() const { return form == Form::keller_segel ? std::exp(p) : p; }
    double f(double u) const { return form == Form::keller_segel ? std::exp(p + u) : std::exp(p * (u - 1.0)); }
    double fu(double u) const { return form == Form::keller_segel ? std::exp(p + u) : p * std::exp(p * (u - 1.0)); }
    double fp(double u) const {
        return form == Form::keller_segel ? std::exp(p + u) : (u - 1.0) * std::exp(p * (u - 1.0));
    }
};

struct BranchPoint {
    Form form = Form::keller_segel;
    double lambda = 0.0;  ///< λ for keller_segel, μ for mu_form
    Profile profile;
    double u0_value = 0.0;
    int zero_count = 0;
    int newton_iters = 0;
    double residual_norm = 0.0;
    std::vector<double> residual_history;

    double param() const { return form == Form::keller_segel ? std::log(lambda) : lambda; }
};

struct NewtonOptions {
    int max_iterations = 50;
    double tol = 1e-12;
    double fold_pivot = 1e-15;  ///< pivot ratio below which the Jacobian counts as singular
};

namespace detail {

inline std::vector<double> bvp_residual(const RadialFD& fd, const Source& src, const std::vector<double>& u) {
    auto F = fd.apply_neg_laplacian(u);
    for (std::size_t i = 0; i < u.size(); ++i) F[i] += u[i] - src.f(u[i]);
    return F;
}

inline Tridiag bvp_jacobian(const RadialFD& fd, const Source& src, const std::vector<double>& u) {
    Tridiag J = fd.neg_laplacian();
    for (std::size_t i = 0; i < u.size(); ++i) J.diag[i] += 1.0 - src.fu(u[i]);
    return J;
}

/// Row weights 1/(1 + |(-Δ_h)_ii|): residuals are measured in units of the local correction size,
/// which keeps the max-norm meaningful on grids spanning many scales.
inline std::vector<double> row_scale(const RadialFD& fd) {
    const auto lap = fd.neg_laplacian();
    std::vector<double> s(fd.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = 1.0 / (1.0 + std::abs(lap.diag[i]));
    return s;
}

inline double scaled_norm(const std::vector<double>& F, const std::vector<double>& s) {
    double m = 0.0;
    for (std::size_t i = 0; i < F.size(); ++i) {
        if (!std::isfinite(F[i])) return INFINITY;
        m = std::max(m, std::abs(s[i] * F[i]));
    }
    return m;
}

inline void scale_rows(Tridiag& J, std::vector<double>& F, const std::vector<double>& s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        J.diag[i] *= s[i];
        if (i > 0) J.sub[i - 1] *= s[i];
        if (i + 1 < s.size()) J.sup[i] *= s[i];
        F[i] *= s[i];
    }
}

/// Roundoff floor of the scaled residual: a few ulps of the largest scaled term.
inline double residual_floor(const RadialFD& fd, const Source& src, const std::vector<double>& u,
                             const std::vector<double>& sc) {
    const auto lap = fd.neg_laplacian();
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        double t = std::abs(lap.diag[i] * u[i]) + std::abs(u[i]) + std::abs(src.f(u[i]));
        if (i > 0) t += std::abs(lap.sub[i - 1] * u[i - 1]);
        if (i + 1 < u.size()) t += std::abs(lap.sup[i] * u[i + 1]);
        s = std::max(s, sc[i] * t);
    }
    return 64.0 * std::numeric_limits<double>::epsilon() * s;
}

}  // namespace detail

/// Number of sign changes of u - 1, ignoring values within `deadband` of 1.
inline int zero_count(const std::vector<double>& u, double deadband = 1e-10) {
    int count = 0, last = 0;
    for (double x : u) {
        const double d = x - 1.0;
        if (std::abs(d) <= deadband) continue;
        const int s = d > 0.0 ? 1 : -1;
        if (last != 0 && s != last) ++count;
        last = s;
    }
    return count;
}

inline BranchPoint make_point(const RadialFD& fd, const Source& src, std::vector<double> u) {
    BranchPoint b;
    b.form = src.form;
    b.lambda = src.param_value();
    b.profile.r = fd.r;
    fd.derivatives(u, b.profile.d1, b.profile.d2);
    b.profile.piece.assign(u.size(), kNone);
    b.u0_value = u.front();
    b.zero_count = zero_count(u);
    b.residual_norm = detail::scaled_norm(detail::bvp_residual(fd, src, u), detail::row_scale(fd));
    b.profile.u = std::move(u);
    return b;
}

/// Damped Newton for the discrete problem at fixed parameter.
inline BranchPoint newton_solve(const RadialFD& fd, const Source& src, std::vector<double> u,
                                const NewtonOptions& opt = {}) {
    std::vector<double> hist;
    const auto sc = detail::row_scale(fd);
    auto F = detail::bvp_residual(fd, src, u);
    double res = detail::scaled_norm(F, sc);
    if (!std::isfinite(res)) throw OverflowError("newton_solve: initial guess overflows", fd.r[0]);
    hist.push_back(res);
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        const double floor = detail::residual_floor(fd, src, u, sc);
        if (res <= std::max(opt.tol, floor)) break;
        Tridiag J = detail::bvp_jacobian(fd, src, u);
        auto rhs = F;
        detail::scale_rows(J, rhs, sc);
        const TridiagLU lu(J);
        if (lu.singular() || lu.min_pivot() < opt.fold_pivot * lu.max_pivot())
            throw FoldError("newton_solve: singular Jacobian (turning point); use continuation");
        auto du = lu.solve(rhs);
        double t = 1.0;
        std::vector<double> un(u.size());
        std::vector<double> Fn;
        double rn = INFINITY;
        for (int ls = 0; ls < 30; ++ls) {
            for (std::size_t i = 0; i < u.size(); ++i) un[i] = u[i] - t * du[i];
            Fn = detail::bvp_residual(fd, src, un);
            rn = detail::scaled_norm(Fn, sc);
            if (rn <= (1.0 - 1e-4 * t) * res || (t == 1.0 && rn <= floor * 4.0)) break;
            t *= 0.5;
        }
        if (!(rn < res) && !(rn <= 4.0 * floor))
            throw ConvergenceError("newton_solve: line search failed", res, it + 1);
        u.swap(un);
        F.swap(Fn);
        res = rn;
        hist.push_back(res);
    }
    if (res > std::max(opt.tol, detail::residual_floor(fd, src, u, sc)))
        throw ConvergenceError("newton_solve: no convergence", res, it);
    BranchPoint b = make_point(fd, src, std::move(u));
    b.newton_iters = it;
    b.residual_history = std::move(hist);
    return b;
}

/// Solves -Δu + u = λe^u, u'(0) = u'(1) = 0 on the guess's grid.
inline BranchPoint solve_bvp(double lambda, const Profile& guess, const NewtonOptions& opt = {}) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("solve_bvp: lambda must be positive");
    for (double x : guess.u)
        if (!std::isfinite(x)) throw DomainError("solve_bvp: initial guess must be finite");
    const RadialFD fd(guess.r);
    return newton_solve(fd, {Form::keller_segel, std::log(lambda)}, guess.u, opt);
}

/// Constant-valued guess on a grid.
inline Profile constant_profile(const std::vector<double>& r, double value) {
    Profile p;
    p.r = r;
    p.u.assign(r.size(), value);
    p.d1.assign(r.size(), 0.0);
    p.d2.assign(r.size(), 0.0);
    p.piece.assign(r.size(), kNone);
    return p;
}

/// Default BVP grid: graded toward 0 at scale √λ and toward 1 at scale ε.
inline std::vector<double> bvp_grid(double lambda, double eps, std::size_t n = 4000) {
    return graded_grid(n, std::clamp(std::sqrt(lambda), 1e-14, 0.1), std::clamp(eps, 1e-6, 0.2));
}

/// Natural continuation in ln λ from a converged Keller–Segel point to `target`, regridding each step.
inline BranchPoint continue_in_lambda(const BranchPoint& start, double target, std::size_t nodes = 4000,
                                      const NewtonOptions& opt = {}, double dlog_max = 0.5) {
    if (start.form != Form::keller_segel) throw DomainError("continue_in_lambda: needs a Keller-Segel point");
    if (!(target > 0.0) || !(target < 1.0 / std::numbers::e))
        throw DomainError("continue_in_lambda: target must lie in (0, 1/e)");
    BranchPoint cur = start;
    const double goal = std::log(target);
    double h = dlog_max;
    while (std::abs(cur.param() - goal) > 1e-14) {
        const double dir = goal > cur.param() ? 1.0 : -1.0;
        const double step = std::min(h, std::abs(goal - cur.param()));
        const double lam = std::exp(cur.param() + dir * step);
        const auto grid = bvp_grid(lam, std::sqrt(2.0) / std::max(1.0, -std::log(lam)), nodes);
        Profile guess = constant_profile(grid, 0.0);
        for (std::size_t i = 0; i < grid.size(); ++i) guess.u[i] = interp(cur.profile.r, cur.profile.u, grid[i]);
        try {
            BranchPoint next = solve_bvp(lam, guess, opt);
            next.lambda = lam;
            cur = std::move(next);
            h = std::min(dlog_max, 1.5 * h);
        } catch (const NumericalError&) {
            h *= 0.5;
            if (h < 1e-6) throw StallError("continue_in_lambda: step underflow");
        }
    }
    return cur;
}

// ---------------------------------------------------------------------------------------------
// Pseudo-arclength continuation.

struct BranchOptions {
    double ds = 0.05;
    double ds_min = 1e-6;
    double ds_max = 1.0;
    int max_corrector = 12;
    double tol = 1e-12;
    double amplitude = 1e-3;  ///< seeding amplitude × eigenfunction max-norm
};

struct BranchResult {
    std::vector<BranchPoint> points;
    bool stalled = false;
    std::string reason;
};

class BranchStall : public StallError {
public:
    BranchStall(const std::string& what, std::vector<BranchPoint> so_far)
        : StallError(what), branch(std::move(so_far)) {}
    std::vector<BranchPoint> branch;
};

namespace detail {

inline std::vector<double> arc_weights(const RadialFD& fd) {
    double tot = 0.0;
    for (double v : fd.vol) tot += v;
    std::vector<double> w(fd.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = fd.vol[i] / tot;
    return w;
}

/// Newton on G(u, p) = 0 with the linear constraint <g, u> + gp p = c.
inline bool bordered_newton(const RadialFD& fd, Source& src, std::vector<double>& u, const std::vector<double>& g,
                            double gp, double c, const BranchOptions& opt, int& iters, double& res) {
    const auto sc = row_scale(fd);
    for (iters = 0; iters <= opt.max_corrector; ++iters) {
        auto F = bvp_residual(fd, src, u);
        double N = gp * src.p - c;
        for (std::size_t i = 0; i < u.size(); ++i) N += g[i] * u[i];
        res = scaled_norm(F, sc);
        if (!std::isfinite(res)) return false;
        if (res <= std::max(opt.tol, residual_floor(fd, src, u, sc)) && std::abs(N) <= 1e-12) return true;
        if (iters == opt.max_corrector) return false;
        Tridiag J = bvp_jacobian(fd, src, u);
        std::vector<double> Gp(u.size());
        for (std::size_t i = 0; i < u.size(); ++i) Gp[i] = -src.fp(u[i]) * sc[i];
        scale_rows(J, F, sc);
        std::vector<double> du;
        double dp = 0.0;
        try {
            bordered_solve(J, Gp, g, gp, F, N, du, dp);
        } catch (const Error&) {
            return false;
        }
        for (std::size_t i = 0; i < u.size(); ++i) u[i] -= du[i];
        src.p -= dp;
    }
    return false;
}

}  // namespace detail

/// Two branch points near the bifurcation (λ_i^rad, 1) of the μ-form, on the side `sign` (+1 or -1)
/// of the eigenfunction direction (u(0) > 1 for sign = +1).
inline std::vector<BranchPoint> seed_branch(int i, int sign, const std::vector<double>& grid,
                                            const BranchOptions& opt = {}) {
    if (i < 2) throw DomainError("seed_branch: bifurcation index must be >= 2");
    if (sign != 1 && sign != -1) throw DomainError("seed_branch: sign must be +1 or -1");
    const RadialFD fd(grid);
    const auto phi = radial_eigenfunction(i, grid);
    const auto w = detail::arc_weights(fd);
    std::vector<double> g(grid.size());
    double pp = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        g[k] = w[k] * phi[k];
        pp += g[k] * phi[k];
    }
    const double mu0 = radial_eigenvalues(i).back();
    std::vector<BranchPoint> out;
    for (double scale : {1.0, 2.0}) {
        const double a = sign * scale * opt.amplitude;
        Source src{Form::mu_form, mu0};
        std::vector<double> u(grid.size());
        for (std::size_t k = 0; k < u.size(); ++k) u[k] = 1.0 + a * phi[k];
        // Constraint <g, u - 1> = a <φ, φ>_w.
        double c = a * pp;
        for (double x : g) c += x;
        int iters = 0;
        double res = 0.0;
        if (!detail::bordered_newton(fd, src, u, g, 0.0, c, opt, iters, res))
            throw ConvergenceError("seed_branch: corrector failed near the bifurcation point", res, iters);
        BranchPoint b = make_point(fd, src, std::move(u));
        b.newton_iters = iters;
        out.push_back(std::move(b));
    }
    return out;
}

/// Continues past `start` in the direction prev → start for `steps` accepted points.
inline BranchResult continue_branch(const BranchPoint& prev, const BranchPoint& start, int steps,
                                    const BranchOptions& opt = {}) {
    if (prev.form != start.form || prev.profile.r != start.profile.r)
        throw DomainError("continue_branch: points must share form and grid");
    if (steps < 1) throw DomainError("continue_branch: steps must be >= 1");
    const RadialFD fd(start.profile.r);
    const auto w = detail::arc_weights(fd);
    const std::size_t n = fd.size();
    BranchResult out;
    std::vector<double> u0 = prev.profile.u, u1 = start.profile.u;
    double p0 = prev.param(), p1 = start.param();
    double ds = opt.ds;
    auto wnorm = [&](const std::vector<double>& du, double dp) {
        double s = dp * dp;
        for (std::size_t i = 0; i < n; ++i) s += w[i] * du[i] * du[i];
        return std::sqrt(s);
    };
    while (int(out.points.size()) < steps) {
        std::vector<double> tu(n);
        for (std::size_t i = 0; i < n; ++i) tu[i] = u1[i] - u0[i];
        double tp = p1 - p0;
        const double nt = wnorm(tu, tp);
        if (!(nt > 0.0)) throw DomainError("continue_branch: coincident points");
        for (auto& x : tu) x /= nt;
        tp /= nt;
        bool accepted = false;
        while (!accepted) {
            std::vector<double> u(n);
            for (std::size_t i = 0; i < n; ++i) u[i] = u1[i] + ds * tu[i];
            Source src{start.form, p1 + ds * tp};
            std::vector<double> g(n);
            double c = tp * (p1 + ds * tp);
            for (std::size_t i = 0; i < n; ++i) {
                g[i] = w[i] * tu[i];
                c += g[i] * u[i];
            }
            int iters = 0;
            double res = 0.0;
            if (detail::bordered_newton(fd, src, u, g, tp, c, opt, iters, res)) {
                BranchPoint b = make_point(fd, src, u);
                b.newton_iters = iters;
                out.points.push_back(std::move(b));
                u0.swap(u1);
                u1 = std::move(u);
                p0 = p1;
                p1 = src.p;
                if (iters <= 3) ds = std::min(ds * 1.5, opt.ds_max);
                accepted = true;
            } else {
                ds *= 0.5;
                if (ds < opt.ds_min) {
                    out.stalled = true;
                    out.reason = "step size underflow";
                    throw BranchStall("continue_branch: step size underflow", std::move(out.points));
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Concentration diagnostics.

struct ConcentrationReport {
    double origin_mass = 0.0;    ///< λ∫_{B_{α₁/2}} e^u
    double total_mass = 0.0;     ///< λ∫_{B₁} e^u
    std::vector<double> layer_fluxes;  ///< |U'^-(α_i)|^{-1}
    double boundary_mass = 0.0;  ///< ε λ∫ e^u over the outer annulus
    double boundary_inner_radius = 0.0;
    double profile_gap = 0.0;    ///< sup |εu - √2 U_{b,k}| away from 0 and the layers (NaN if the set is empty)
    double exclusion_radius = 0.0;
    std::size_t gap_samples = 0;
};

/// Post-processing of a converged Keller–Segel point against the layered Green's function `ref`
/// (built with b = 4ε/√2). `eps` is ε(λ).
inline ConcentrationReport concentration_report(const BranchPoint& pt, const LayerSolution& ref, double eps) {
    if (pt.form != Form::keller_segel) throw DomainError("concentration_report: needs a Keller-Segel point");
    const double lambda = pt.lambda;
    const auto& r = pt.profile.r;
    const auto& u = pt.profile.u;
    std::vector<double> dens(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) dens[i] = lambda * std::exp(u[i]);
    ConcentrationReport c;
    const auto radii = ref.config.layer_radii();
    c.origin_mass = l1_disk(r, dens, 0.0, radii.front() / 2.0, false);
    c.total_mass = l1_disk(r, dens, 0.0, 1.0, false);
    for (std::size_t i = 0; i < radii.size(); ++i) c.layer_fluxes.push_back(1.0 / std::abs(ref.green.left_deriv(i)));
    const double last_free = ref.config.alphas.empty() ? 0.5 : ref.config.alphas.back();
    c.boundary_inner_radius = 0.5 * (last_free + 1.0);
    c.boundary_mass = eps * l1_disk(r, dens, c.boundary_inner_radius, 1.0, false);
    c.exclusion_radius = 10.0 * std::max(std::sqrt(lambda), eps);
    double gap = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (r[i] <= c.exclusion_radius) continue;
        bool near = false;
        for (double a : radii) near = near || std::abs(r[i] - a) <= c.exclusion_radius;
        if (near) continue;
        gap = std::max(gap, std::abs(eps * u[i] - std::numbers::sqrt2 * ref.green.value(r[i])));
        ++c.gap_samples;
    }
    c.profile_gap = c.gap_samples ? gap : std::numeric_limits<double>::quiet_NaN();
    return c;
}

}  // namespace kslayers
