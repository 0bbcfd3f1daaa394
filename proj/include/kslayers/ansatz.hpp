#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"
#include "greens.hpp"
#include "linalg.hpp"
#include "nondegen.hpp"
#include "ode.hpp"
#include "profile.hpp"
#include "specfun.hpp"

namespace kslayers {

/// Space dimension of the ball.
inline constexpr int kDim = 2;

inline constexpr double kDefaultEta = 0.8;

/// λ(ε) = (4/ε²) e^{-√2/ε}.
inline double lambda_of_epsilon(double eps) {
    if (!(eps > 0.0)) throw DomainError("lambda_of_epsilon: eps must be positive");
    return 4.0 / (eps * eps) * std::exp(-std::numbers::sqrt2 / eps);
}

/// Small root of ln(4/ε²) - ln λ = √2/ε.
inline double solve_epsilon(double lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda) || lambda >= std::exp(-1.0))
        throw DomainError("solve_epsilon: lambda must lie in (0, 1/e)");
    const double ll = std::log(lambda);
    auto f = [&](double e) { return std::log(4.0 / (e * e)) - ll - std::numbers::sqrt2 / e; };
    auto df = [](double e) { return -2.0 / e + std::numbers::sqrt2 / (e * e); };
    double lo = 1e-6, hi = 1.0 / std::numbers::sqrt2;
    if (f(lo) > 0.0) throw DomainError("solve_epsilon: lambda below the representable range");
    while (hi - lo > 1e-4 * lo) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    double e = 0.5 * (lo + hi);
    for (int it = 0; it < 50; ++it) {
        const double step = f(e) / df(e);
        e -= step;
        if (std::abs(step) <= 1e-16 * e) break;
    }
    return e;
}

struct RadialValue {
    double u = 0.0, d1 = 0.0, d2 = 0.0;
};

/// Two-dimensional bubble U₀(r) = ln(8μ²/(μ²λ + r²)²) with derivatives.
inline RadialValue bubble2d_eval(double r, double mu, double lambda) {
    if (!(r >= 0.0)) throw DomainError("bubble2d: r must be nonnegative");
    const double m = mu * mu * lambda;
    const double q = m + r * r;
    return {std::log(8.0 * mu * mu) - 2.0 * std::log(q), -4.0 * r / q, -4.0 * (m - r * r) / (q * q)};
}

inline double bubble2d(double r, double mu, double lambda) { return bubble2d_eval(r, mu, lambda).u; }

/// One-dimensional bubble W(s) = ln(4e^{-√2|s|}/(1 + e^{-√2|s|})²) and its derivatives.
inline RadialValue bubble1d_stretched(double s) {
    const double x = std::numbers::sqrt2 * std::abs(s);
    const double t = std::tanh(s / std::numbers::sqrt2);
    return {std::log(4.0) - x - 2.0 * std::log1p(std::exp(-x)), -std::numbers::sqrt2 * t, -(1.0 - t * t)};
}

/// W_μ̃(r) = W((r - 1)/μ̃) - 2 ln μ̃ with r-derivatives.
inline RadialValue bubble1d_eval(double r, double mu_tilde) {
    if (!(r <= 1.0)) throw DomainError("bubble1d: r must not exceed 1");
    if (!(mu_tilde > 0.0)) throw DomainError("bubble1d: mu_tilde must be positive");
    const RadialValue w = bubble1d_stretched((r - 1.0) / mu_tilde);
    return {w.u - 2.0 * std::log(mu_tilde), w.d1 / mu_tilde, w.d2 / (mu_tilde * mu_tilde)};
}

inline double bubble1d(double r, double mu_tilde) { return bubble1d_eval(r, mu_tilde).u; }

// ---------------------------------------------------------------------------------------------
// Layer correction stack in the stretched variable s = (r - R)/μ.

/// Data of one layer: center R, scale μ = εγ, and the equation parameters.
struct StackParams {
    double R = 1.0;
    double mu = 0.0;
    double eps = 0.0;
    double lambda = 0.0;

    double gamma() const { return mu / eps; }
};

/// Correction profiles at one stretched point. Expansion terms are in s; the exact
/// α_ε, β_ε are in original units with s-derivatives.
struct StackState {
    double s = 0.0;
    double a1 = 0, a1s = 0, a1ss = 0;
    double a2 = 0, a2s = 0, a2ss = 0;
    double v = 0, vs = 0, vss = 0;
    double b1 = 0, b1s = 0, b1ss = 0;
    double z = 0, zs = 0, zss = 0;
    double alpha = 0, alpha_s = 0, alpha_ss = 0;
    double beta = 0, beta_s = 0, beta_ss = 0;
};

namespace detail {

inline constexpr std::size_t kStackDim = 14;

inline void stack_rhs(const StackParams& p, bool exact, double s, const std::vector<double>& y,
                      std::vector<double>& dy) {
    const RadialValue w = bubble1d_stretched(s);
    const double eW = -w.d2;
    const double g = p.gamma();
    const double nm1 = kDim - 1;
    const double R = p.R;
    dy[0] = y[1];
    dy[1] = -nm1 * w.d1 / R + std::numbers::sqrt2 * g;
    dy[2] = y[3];
    dy[3] = -nm1 * y[1] / R + nm1 * s * w.d1 / (R * R) + w.u - 2.0 * std::log(g) - std::log(4.0);
    dy[4] = y[5];
    dy[5] = -eW * (y[4] + y[0]);
    dy[6] = y[7];
    dy[7] = -nm1 * y[5] / R;
    dy[8] = y[9];
    dy[9] = -eW * (y[8] + y[2] + y[6] + 0.5 * (y[0] + y[4]) * (y[0] + y[4]));
    if (exact) {
        const double r = R + p.mu * s;
        const double mu = p.mu;
        dy[10] = y[11];
        dy[11] = -mu * nm1 * (y[11] + w.d1) / r + mu * mu * (w.u - 2.0 * std::log(mu) - std::log(p.lambda));
        dy[12] = y[13];
        dy[13] = -mu * nm1 * (y[13] + mu * y[5]) / r;
    } else {
        dy[10] = dy[11] = dy[12] = dy[13] = 0.0;
    }
}

}  // namespace detail

/// Integrates the stack from s = 0 (all profiles and slopes zero) to the given stretched
/// points, which must move monotonically away from 0. `exact` also carries α_ε and β_ε,
/// which requires R + μs > 0.
inline std::vector<StackState> integrate_stack(const StackParams& p, const std::vector<double>& s_out, bool exact,
                                               const OdeOptions& ode = {}) {
    if (!(p.mu > 0.0) || !(p.eps > 0.0) || !(p.lambda > 0.0) || !(p.R > 0.0))
        throw DomainError("integrate_stack: invalid layer parameters");
    std::vector<StackState> out;
    if (s_out.empty()) return out;
    for (std::size_t i = 0; i < s_out.size(); ++i) {
        if (exact && !(p.R + p.mu * s_out[i] > 0.0))
            throw DomainError("integrate_stack: exact profiles need R + mu s > 0");
        const double prev = i == 0 ? 0.0 : s_out[i - 1];
        if (std::abs(s_out[i]) < std::abs(prev) || s_out[i] * prev < 0.0)
            throw DomainError("integrate_stack: outputs must move away from s = 0 on one side");
    }
    auto f = [&](double s, const std::vector<double>& y, std::vector<double>& dy) {
        detail::stack_rhs(p, exact, s, y, dy);
    };
    OdeOptions o = ode;
    if (o.h_initial <= 0.0) o.h_initial = 1e-3;
    o.h_max = std::min(o.h_max, 0.25);
    const auto ys = integrate_dp45(f, 0.0, std::vector<double>(detail::kStackDim, 0.0), s_out, o);
    std::vector<double> dy(detail::kStackDim);
    out.reserve(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) {
        const auto& y = ys[i];
        detail::stack_rhs(p, exact, s_out[i], y, dy);
        StackState st;
        st.s = s_out[i];
        st.a1 = y[0], st.a1s = y[1], st.a1ss = dy[1];
        st.a2 = y[2], st.a2s = y[3], st.a2ss = dy[3];
        st.v = y[4], st.vs = y[5], st.vss = dy[5];
        st.b1 = y[6], st.b1s = y[7], st.b1ss = dy[7];
        st.z = y[8], st.zs = y[9], st.zss = dy[9];
        st.alpha = y[10], st.alpha_s = y[11], st.alpha_ss = dy[11];
        st.beta = y[12], st.beta_s = y[13], st.beta_ss = dy[13];
        out.push_back(st);
    }
    return out;
}

/// Layer profile u₄ = W_μ - ln λ + α_ε + μ v̂ + β_ε + μ² ẑ at a stack state.
inline RadialValue layer_value(const StackParams& p, const StackState& st) {
    const RadialValue w = bubble1d_stretched(st.s);
    const double mu = p.mu;
    const double u = w.u - 2.0 * std::log(mu) - std::log(p.lambda) + st.alpha + mu * st.v + st.beta + mu * mu * st.z;
    const double us = w.d1 + st.alpha_s + mu * st.vs + st.beta_s + mu * mu * st.zs;
    const double uss = w.d2 + st.alpha_ss + mu * st.vss + st.beta_ss + mu * mu * st.zss;
    return {u, us / mu, uss / (mu * mu)};
}

/// Far-field constants of the correction profiles on one side of a layer.
struct CorrectionConstants {
    double nu1 = 0.0, nu2 = 0.0;      ///< v̂ ≈ ν₁ s + ν₂
    double zeta1 = 0.0, zeta2 = 0.0;  ///< ẑ ≈ ζ₁ s + ζ₂
    double nu1_closed = 0.0;          ///< -2(n-1)(1 - ln 2)/R + 2 ln 2 γ (left side, R = 1 form)
    double a10 = 0.0, a11 = 0.0;      ///< (α_ε)₁ ≈ γ s²/√2 + a11 s + a10
    double q0 = 0.0, q1 = 0.0;        ///< constant and linear coefficients of (α_ε)₂ + β₁ (cubic far field)
    double fit_residual = 0.0;        ///< worst relative deviation from the fitted asymptotics
    double window_near = 0.0, window_far = 0.0;
    bool widened = false;
};

namespace detail {

/// Least-squares polynomial fit of degree d on (t, f); returns coefficients and worst relative residual.
inline std::vector<double> poly_fit(const std::vector<double>& t, const std::vector<double>& f, int d,
                                    double& rel_residual) {
    const std::size_t m = static_cast<std::size_t>(d + 1);
    double tmax = 0.0, fmax = 1.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        tmax = std::max(tmax, std::abs(t[i]));
        fmax = std::max(fmax, std::abs(f[i]));
    }
    DenseMatrix A(m);
    std::vector<double> rhs(m, 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double x = t[i] / tmax;
        std::vector<double> pw(m, 1.0);
        for (std::size_t j = 1; j < m; ++j) pw[j] = pw[j - 1] * x;
        for (std::size_t a = 0; a < m; ++a) {
            rhs[a] += pw[a] * f[i];
            for (std::size_t b = 0; b < m; ++b) A(a, b) += pw[a] * pw[b];
        }
    }
    auto c = DenseLU(A).solve(rhs);
    double worst = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double x = t[i] / tmax;
        double v = 0.0;
        for (std::size_t j = m; j-- > 0;) v = v * x + c[j];
        worst = std::max(worst, std::abs(v - f[i]) / fmax);
    }
    for (std::size_t j = 0; j < m; ++j) c[j] /= std::pow(tmax, double(j));
    rel_residual = worst;
    return c;
}

inline CorrectionConstants fit_constants(const StackParams& p, int side, double s_near, double s_far,
                                         const OdeOptions& ode) {
    const int npts = 81;
    std::vector<double> s_out(npts);
    for (int i = 0; i < npts; ++i) s_out[i] = side * (s_near + (s_far - s_near) * i / (npts - 1));
    const auto st = integrate_stack(p, s_out, false, ode);
    std::vector<double> v(npts), z(npts), a1(npts), q(npts);
    for (int i = 0; i < npts; ++i) {
        v[i] = st[i].v;
        z[i] = st[i].z;
        a1[i] = st[i].a1;
        q[i] = st[i].a2 + st[i].b1;
    }
    CorrectionConstants c;
    double r1 = 0, r2 = 0, r3 = 0, r4 = 0;
    const auto cv = poly_fit(s_out, v, 1, r1);
    const auto cz = poly_fit(s_out, z, 1, r2);
    const auto ca = poly_fit(s_out, a1, 2, r3);
    const auto cq = poly_fit(s_out, q, 3, r4);
    c.nu2 = cv[0], c.nu1 = cv[1];
    c.zeta2 = cz[0], c.zeta1 = cz[1];
    c.a10 = ca[0], c.a11 = ca[1];
    c.q0 = cq[0], c.q1 = cq[1];
    c.fit_residual = std::max({r1, r2, r3, r4});
    c.window_near = s_near;
    c.window_far = s_far;
    c.nu1_closed = -2.0 * (kDim - 1) * (1.0 - std::numbers::ln2) / p.R + 2.0 * std::numbers::ln2 * p.gamma();
    return c;
}

}  // namespace detail

inline constexpr double kFitTolerance = 1e-6;

/// Extracts ν₁, ν₂, ζ₁, ζ₂ (and the polynomial far-field data of (α_ε)₁, (α_ε)₂ + β₁) by
/// least squares on a window where the exponential tails are below 1e-10.
/// side = -1 is the inner side r < R, side = +1 the outer side.
inline CorrectionConstants correction_constants(const StackParams& p, int side = -1, const OdeOptions& ode = {}) {
    if (side != -1 && side != 1) throw DomainError("correction_constants: side must be -1 or +1");
    auto c = detail::fit_constants(p, side, 24.0, 40.0, ode);
    if (c.fit_residual > kFitTolerance) {
        c = detail::fit_constants(p, side, 32.0, 56.0, ode);
        c.widened = true;
        if (c.fit_residual > kFitTolerance)
            throw ExtractionError("correction_constants: affine asymptotics not reached", c.fit_residual);
    }
    return c;
}

// ---------------------------------------------------------------------------------------------
// Outer profile u₂ = (√2/ε) U_ε with U_ε = Aζ + Bξ.

enum class MatchingOrder {
    leading,   ///< value: ν₂ and the (α_ε)₁ constant; slope: ν₁ closed form and ζ₁
    extended,  ///< additionally the constant/linear far-field terms of (α_ε)₂ + β₁ and ζ₂
};

struct AnsatzOptions {
    double eta = kDefaultEta;
    MatchingOrder matching = MatchingOrder::leading;
    OdeOptions ode{1e-10, 1e-10};
    std::size_t grid_nodes = 4000;
};

struct OuterSolution {
    double lambda = 0.0, eps = 0.0;
    double gamma = 0.0;
    double A = 0.0, B = 0.0;
    double value_at_1 = 0.0;  ///< U_ε(1)
    double r_tilde = 0.0;
    double H0 = 0.0;          ///< lim_{r→0} (u₂ + 4 ln r)
    CorrectionConstants constants;
    PiecewiseGreen green;     ///< U_ε as a one-layer piecewise solution
    int iterations = 0;
};

namespace detail {

struct MatchTargets {
    double value, slope;  ///< targets for u₂(1), u₂'(1)
};

inline MatchTargets match_targets(double eps, double gamma, const CorrectionConstants& c, MatchingOrder order) {
    const double mt = eps * gamma;
    MatchTargets t;
    t.value = std::numbers::sqrt2 / eps - 2.0 * std::log(gamma) + mt * (c.a10 + c.nu2);
    t.slope = std::numbers::sqrt2 / mt - 2.0 * (kDim - 1) + 2.0 * gamma * std::numbers::ln2 + mt * c.zeta1;
    if (order == MatchingOrder::extended) {
        t.value += mt * mt * (c.q0 + c.zeta2);
        t.slope += mt * c.q1;
    }
    return t;
}

/// Zero of the derivative of the first piece of g (sign change from negative to positive).
inline double critical_radius(const PiecewiseGreen& g) {
    const GreenPiece& p = g.pieces[0];
    double lo = 1e-14, hi = p.hi;
    if (!(PiecewiseGreen::eval(p, lo, 1) < 0.0) || !(PiecewiseGreen::eval(p, hi, 1) > 0.0))
        throw MatchingError("critical_radius: the outer profile has no interior minimum in its first piece");
    for (int it = 0; it < 200 && hi - lo > 1e-16 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (PiecewiseGreen::eval(p, mid, 1) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// lim_{r→0} (G + b ln r) for the first piece.
inline double regular_part_at_0(const PiecewiseGreen& g) {
    const GreenPiece& p = g.pieces[0];
    return p.cI + p.cK * (std::numbers::ln2 - kEulerGamma);
}

}  // namespace detail

/// Solves the two matching conditions at r = 1 for (B, γ_ε). The derivative condition
/// fixes B given γ, and γ is the root of the remaining value condition.
inline OuterSolution outer_u2(double lambda, const AnsatzOptions& opt = {}) {
    OuterSolution o;
    o.lambda = lambda;
    o.eps = solve_epsilon(lambda);
    const double eps = o.eps;
    o.A = 4.0 * eps / std::numbers::sqrt2;
    const BesselPair one = xi_zeta(1.0);
    int evals = 0;
    auto residual = [&](double g, CorrectionConstants* keep, double* Bout) {
        ++evals;
        const auto c = correction_constants({1.0, eps * g, eps, lambda}, -1, opt.ode);
        const auto t = detail::match_targets(eps, g, c, opt.matching);
        const double B = eps / std::numbers::sqrt2 * t.slope / one.xip;
        if (keep) *keep = c;
        if (Bout) *Bout = B;
        return std::numbers::sqrt2 / eps * (o.A * one.zeta + B * one.xi) - t.value;
    };

    double g_lo = 0.05, f_lo = residual(g_lo, nullptr, nullptr);
    double g_hi = g_lo, f_hi = f_lo;
    bool found = false;
    while (g_hi < 500.0) {
        g_hi = g_lo * 1.5;
        f_hi = residual(g_hi, nullptr, nullptr);
        if (std::isfinite(f_lo) && std::isfinite(f_hi) && f_lo * f_hi <= 0.0) {
            found = true;
            break;
        }
        g_lo = g_hi;
        f_lo = f_hi;
    }
    if (!found) throw MatchingError("outer_u2: no sign change of the matching condition for gamma in (0.05, 500)");

    // Illinois false position.
    int side = 0;
    double g = g_lo;
    for (int it = 0; it < 100; ++it) {
        g = (g_lo * f_hi - g_hi * f_lo) / (f_hi - f_lo);
        const double fg = residual(g, nullptr, nullptr);
        if (fg == 0.0 || std::abs(g_hi - g_lo) <= 1e-14 * g) break;
        if (fg * f_hi > 0.0) {
            g_hi = g;
            f_hi = fg;
            if (side == -1) f_lo *= 0.5;
            side = -1;
        } else {
            g_lo = g;
            f_lo = fg;
            if (side == 1) f_hi *= 0.5;
            side = 1;
        }
        if (std::abs(fg) <= 1e-12 * (std::numbers::sqrt2 / eps)) break;
    }
    if (!(g > 0.0) || !std::isfinite(g)) throw MatchingError("outer_u2: gamma_eps must be positive");
    const double fin = residual(g, &o.constants, &o.B);
    if (std::abs(fin) > 1e-9 * (std::numbers::sqrt2 / eps))
        throw MatchingError("outer_u2: matching conditions not met, residual " + std::to_string(fin));
    o.gamma = g;
    o.iterations = evals;
    o.value_at_1 = o.A * one.zeta + o.B * one.xi;
    o.green = build_piecewise({1.0}, {o.value_at_1}, o.A, OuterMode::dirichlet_one);
    o.r_tilde = detail::critical_radius(o.green);
    o.H0 = std::numbers::sqrt2 / eps * detail::regular_part_at_0(o.green);
    return o;
}

// ---------------------------------------------------------------------------------------------
// Inner profile u₀ = U₀ + H₀ with -ΔH₀ + H₀ = -U₀ on (0, r̃), H₀'(0) = 0, H₀'(r̃) = -U₀'(r̃).

class InnerSolution {
public:
    InnerSolution() = default;

    InnerSolution(double lambda, double mu, double r_tilde, const OdeOptions& ode = {1e-10, 1e-10})
        : lambda_(lambda), mu_(mu), r_tilde_(r_tilde), ode_(ode) {
        if (!(lambda > 0.0) || !(mu > 0.0) || !(r_tilde > 0.0) || !(r_tilde <= 1.0))
            throw DomainError("inner_u0: invalid parameters");
        scale_ = mu * std::sqrt(lambda);
        u00_ = bubble2d_eval(0.0, mu, lambda).u;
        r_start_ = std::min(1e-6 * scale_, 1e-3 * r_tilde);
        std::vector<double> hp, dhp, d2hp;
        particular({r_tilde}, hp, dhp, d2hp);
        const BesselEval e = modified_bessel(r_tilde);
        const double u0p = bubble2d_eval(r_tilde, mu, lambda).d1;
        h0_ = (-u0p - dhp[0]) / e.I0p;
    }

    double lambda() const { return lambda_; }
    double mu() const { return mu_; }
    double r_tilde() const { return r_tilde_; }
    double scale() const { return scale_; }
    double h0() const { return h0_; }

    /// H₀ and derivatives at ascending radii in [0, r̃].
    void eval_H0(const std::vector<double>& r, std::vector<double>& H, std::vector<double>& dH,
                 std::vector<double>& d2H) const {
        particular(r, H, dH, d2H);
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (r[i] == 0.0) {
                H[i] += h0_;
                d2H[i] += 0.5 * h0_;
                continue;
            }
            const BesselEval e = modified_bessel(r[i]);
            H[i] += h0_ * e.I0;
            dH[i] += h0_ * e.I0p;
            d2H[i] += h0_ * (e.I0 - e.I0p / r[i]);
        }
    }

    /// u₀ = U₀ + H₀ at ascending radii in [0, r̃].
    std::vector<RadialValue> eval_u0(const std::vector<double>& r) const {
        std::vector<double> H, dH, d2H;
        eval_H0(r, H, dH, d2H);
        std::vector<RadialValue> out(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) {
            const RadialValue b = bubble2d_eval(r[i], mu_, lambda_);
            out[i] = {b.u + H[i], b.d1 + dH[i], b.d2 + d2H[i]};
        }
        return out;
    }

private:
    /// Regular particular solution H_p with H_p(0) = 0.
    void particular(const std::vector<double>& r, std::vector<double>& H, std::vector<double>& dH,
                    std::vector<double>& d2H) const {
        const std::size_t n = r.size();
        H.assign(n, 0.0);
        dH.assign(n, 0.0);
        d2H.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            if (!(r[i] >= 0.0) || r[i] > r_tilde_ * (1.0 + 1e-14) || (i > 0 && r[i] < r[i - 1]))
                throw DomainError("inner_u0: radii must be ascending in [0, r_tilde]");
        }
        const double a = u00_ / 4.0;
        std::vector<double> outs;
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n; ++i) {
            if (r[i] <= r_start_) {
                H[i] = a * r[i] * r[i];
                dH[i] = 2.0 * a * r[i];
                d2H[i] = 2.0 * a;
            } else {
                outs.push_back(r[i]);
                idx.push_back(i);
            }
        }
        if (outs.empty()) return;
        auto f = [&](double t, const std::vector<double>& y, std::vector<double>& dy) {
            dy[0] = y[1];
            dy[1] = y[0] + bubble2d_eval(t, mu_, lambda_).u - y[1] / t;
        };
        OdeOptions o = ode_;
        o.h_initial = 0.1 * r_start_;
        const double rs = r_start_;
        const auto ys = integrate_dp45(f, rs, {a * rs * rs, 2.0 * a * rs}, outs, o);
        for (std::size_t j = 0; j < outs.size(); ++j) {
            const std::size_t i = idx[j];
            H[i] = ys[j][0];
            dH[i] = ys[j][1];
            d2H[i] = ys[j][0] + bubble2d_eval(outs[j], mu_, lambda_).u - ys[j][1] / outs[j];
        }
    }

    double lambda_ = 0.0, mu_ = 0.0, r_tilde_ = 0.0;
    OdeOptions ode_{};
    double scale_ = 0.0, u00_ = 0.0, r_start_ = 0.0, h0_ = 0.0;
};

// ---------------------------------------------------------------------------------------------
// Assembled approximation.

struct AnsatzParams {
    double lambda = 0.0, eps = 0.0, eta = kDefaultEta;
    double delta = 0.0, delta1 = 0.0;
    double mu = 0.0, mu_tilde = 0.0, gamma_eps = 0.0;
    double r_tilde = 0.0;
    double H0 = 0.0;                  ///< H(0), regular part of u₂ at the origin
    bool H0_negative = false;         ///< reported, not enforced
    double A = 0.0, B = 0.0;
    CorrectionConstants constants;

    /// Machine check of the parameter invariants; throws DomainError on violation.
    void validate() const {
        const double rel = std::log(4.0 / (eps * eps)) - std::log(lambda) - std::numbers::sqrt2 / eps;
        if (!(std::abs(rel) <= 1e-12 * std::max(1.0, std::numbers::sqrt2 / eps)))
            throw DomainError("AnsatzParams: eps does not solve the parameter relation");
        if (!(eta > 2.0 / 3.0 && eta < 1.0))
            throw DomainError("AnsatzParams: eta must lie in the admissible window (2/3, 1)");
        if (!(2.0 * delta < r_tilde) || !(delta <= 0.5 * std::sqrt(eps) * (1.0 + 1e-15)))
            throw DomainError("AnsatzParams: delta must satisfy 2 delta < r_tilde and delta <= sqrt(eps)/2");
        if (!(std::abs(mu * mu - std::exp(H0) / 8.0) <= 1e-12 * mu * mu))
            throw DomainError("AnsatzParams: mu^2 must equal exp(H(0))/8");
        if (!(std::abs(mu_tilde - eps * gamma_eps) <= 1e-14 * mu_tilde))
            throw DomainError("AnsatzParams: mu_tilde must equal eps * gamma_eps");
    }
};

inline void validate_eta(double eta) {
    if (!(eta > 2.0 / 3.0 && eta < 1.0))
        throw DomainError("eta = " + std::to_string(eta) + " outside the admissible window (2/3, 1)");
}

/// One concentration layer of the assembled profile.
struct Peak {
    StackParams stack;
    bool left = true;   ///< carries the r < R side
    bool right = false; ///< carries the r > R side
};

/// The glued approximation: inner piece, outer (piecewise Green) piece and layer pieces,
/// joined by quintic smoothstep cutoffs.
class Ansatz {
public:
    double lambda = 0.0, eps = 0.0, eta = kDefaultEta;
    double delta = 0.0, delta1 = 0.0;
    InnerSolution inner;
    PiecewiseGreen outer;  ///< U with u₂ = (√2/ε) U
    std::vector<Peak> peaks;
    OdeOptions ode{1e-10, 1e-10};

    double outer_scale() const { return std::numbers::sqrt2 / eps; }

    /// Piece boundaries (δ, 2δ, and R ∓ δ₁, R ∓ 2δ₁ for each layer side).
    std::vector<double> breakpoints() const {
        std::vector<double> b{delta, 2.0 * delta};
        for (const auto& p : peaks) {
            if (p.left) {
                b.push_back(p.stack.R - 2.0 * delta1);
                b.push_back(p.stack.R - delta1);
            }
            if (p.right) {
                b.push_back(p.stack.R + delta1);
                b.push_back(p.stack.R + 2.0 * delta1);
            }
        }
        std::sort(b.begin(), b.end());
        return b;
    }

    /// Graded grid with the piece boundaries as nodes.
    std::vector<double> grid(std::size_t n = 4000) const {
        GridSpec gs;
        gs.a0 = std::clamp(inner.scale(), 1e-14, 0.1);
        for (const auto& p : peaks) {
            gs.centers.push_back(p.stack.R);
            gs.widths.push_back(p.stack.mu);
        }
        std::vector<double> pins;
        for (double b : breakpoints())
            if (b < 1.0) pins.push_back(b);
        for (const auto& p : peaks)
            if (p.stack.R < 1.0) pins.push_back(p.stack.R);
        std::sort(pins.begin(), pins.end());
        return pin_points(graded_grid(n, gs), pins);
    }

    /// Raw outer piece u₂ at r > 0.
    RadialValue eval_u2(double r) const {
        if (!(r > 0.0)) throw DomainError("eval_u2: r must be positive");
        const double s = outer_scale();
        return {s * outer.value(r), s * outer.deriv(r), s * outer.deriv2(r)};
    }

    /// Raw layer piece of peak j on its `side` at the given radii.
    std::vector<RadialValue> eval_layer(std::size_t j, int side, const std::vector<double>& r) const {
        const StackParams& sp = peaks.at(j).stack;
        std::vector<std::size_t> order(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) {
            order[i] = i;
            if ((r[i] - sp.R) * side < 0.0) throw DomainError("eval_layer: radius on the wrong side of the layer");
        }
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return std::abs(r[a] - sp.R) < std::abs(r[b] - sp.R); });
        std::vector<double> s(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) s[i] = side * std::abs(r[order[i]] - sp.R) / sp.mu;
        const auto st = integrate_stack(sp, s, true, ode);
        std::vector<RadialValue> out(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) out[order[i]] = layer_value(sp, st[i]);
        return out;
    }

    /// Assembled U with piece labels on an ascending grid in [0, 1].
    Profile sample(const std::vector<double>& r) const {
        const std::size_t n = r.size();
        if (n == 0 || r.front() < 0.0 || r.back() > 1.0) throw DomainError("Ansatz::sample: grid must lie in [0,1]");
        for (std::size_t i = 1; i < n; ++i)
            if (!(r[i] > r[i - 1])) throw DomainError("Ansatz::sample: grid must increase strictly");
        Profile P;
        P.r = r;
        P.u.assign(n, 0.0);
        P.d1.assign(n, 0.0);
        P.d2.assign(n, 0.0);
        P.piece.assign(n, kNone);

        // Inner region.
        std::vector<double> rin;
        for (double x : r)
            if (x < 2.0 * delta) rin.push_back(x);
        const auto u0 = inner.eval_u0(rin);

        // Layer regions: which (peak, side) covers each point.
        std::vector<int> lp(n, -1), ls(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < peaks.size(); ++j) {
                const auto& p = peaks[j];
                const double d = r[i] - p.stack.R;
                if (p.left && d <= 0.0 && d >= -2.0 * delta1) { lp[i] = int(j); ls[i] = -1; }
                if (p.right && d > 0.0 && d <= 2.0 * delta1) { lp[i] = int(j); ls[i] = 1; }
            }
        }
        std::vector<RadialValue> u4(n);
        for (std::size_t j = 0; j < peaks.size(); ++j) {
            for (int side : {-1, 1}) {
                std::vector<double> pts;
                std::vector<std::size_t> at;
                for (std::size_t i = 0; i < n; ++i)
                    if (lp[i] == int(j) && ls[i] == side) {
                        pts.push_back(r[i]);
                        at.push_back(i);
                    }
                if (pts.empty()) continue;
                const auto v = eval_layer(j, side, pts);
                for (std::size_t q = 0; q < at.size(); ++q) u4[at[q]] = v[q];
            }
        }

        std::size_t ki = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = r[i];
            RadialValue out;
            int label = kU2;
            if (x < delta) {
                out = u0[ki++];
                label = kU0;
            } else if (x < 2.0 * delta) {
                const RadialValue a = u0[ki++], b = eval_u2(x);
                double S, dS, ddS;
                smoothstep((x - delta) / delta, S, dS, ddS);
                out = blend(1.0 - S, -dS / delta, -ddS / (delta * delta), a, b);
                label = kU1;
            } else if (lp[i] >= 0) {
                const Peak& p = peaks[lp[i]];
                const double d = std::abs(x - p.stack.R);
                if (d <= delta1) {
                    out = u4[i];
                    label = kU4;
                } else {
                    // χ = 1 at distance 2δ₁ (outer piece), 0 at δ₁ (layer piece).
                    const double t = (d - delta1) / delta1;
                    double S, dS, ddS;
                    smoothstep(t, S, dS, ddS);
                    const double sgn = double(ls[i]);
                    out = blend(S, sgn * dS / delta1, ddS / (delta1 * delta1), eval_u2(x), u4[i]);
                    label = kU3;
                }
            } else {
                out = eval_u2(x);
            }
            P.u[i] = out.u;
            P.d1[i] = out.d1;
            P.d2[i] = out.d2;
            P.piece[i] = label;
            if (!std::isfinite(out.u) || !std::isfinite(out.d1) || !std::isfinite(out.d2))
                throw OverflowError("Ansatz::sample: non-finite value", x);
        }
        return P;
    }

    Profile sample() const { return sample(grid()); }

    /// χ a + (1 - χ) b with derivatives.
    static RadialValue blend(double chi, double dchi, double ddchi, const RadialValue& a, const RadialValue& b) {
        RadialValue o;
        o.u = chi * a.u + (1.0 - chi) * b.u;
        o.d1 = dchi * (a.u - b.u) + chi * a.d1 + (1.0 - chi) * b.d1;
        o.d2 = ddchi * (a.u - b.u) + 2.0 * dchi * (a.d1 - b.d1) + chi * a.d2 + (1.0 - chi) * b.d2;
        return o;
    }
};

namespace detail {

inline void set_inner(Ansatz& a, double r_tilde, double H0) {
    const double mu = std::sqrt(std::exp(H0) / 8.0);
    if (!std::isfinite(mu) || !(mu > 0.0)) throw OverflowError("ansatz: exp(H(0)) overflows", 0.0);
    a.delta = std::min(0.5 * std::sqrt(a.eps), 0.25 * r_tilde);
    a.delta1 = std::pow(a.eps, a.eta);
    a.inner = InnerSolution(a.lambda, mu, r_tilde, a.ode);
}

inline void check_layout(const Ansatz& a) {
    double prev = 2.0 * a.delta;
    for (const auto& p : a.peaks) {
        const double lo = p.left ? p.stack.R - 2.0 * a.delta1 : p.stack.R;
        if (!(lo > prev))
            throw MatchingError("ansatz: transition bands overlap (delta = " + std::to_string(a.delta) +
                                ", delta1 = " + std::to_string(a.delta1) + ")");
        prev = p.right ? p.stack.R + 2.0 * a.delta1 : p.stack.R;
    }
    if (prev > 1.0) throw MatchingError("ansatz: outer transition band leaves the unit ball");
}

}  // namespace detail

/// Boundary-layer correction profiles on the matching window [1 - 2δ₁, 1].
struct BoundaryCorrections {
    std::vector<double> r, s;
    std::vector<double> alpha, v, beta, z;       ///< α_ε, v_ε = μ̃v̂, β_ε, z_ε = μ̃²ẑ in r units
    std::vector<double> dalpha, dv, dbeta, dz;   ///< r-derivatives
    std::vector<StackState> states;
    CorrectionConstants constants;
};

inline BoundaryCorrections boundary_corrections(const AnsatzParams& p, std::size_t npts = 201,
                                                const OdeOptions& ode = {1e-10, 1e-10}) {
    p.validate();
    const StackParams sp{1.0, p.mu_tilde, p.eps, p.lambda};
    BoundaryCorrections bc;
    bc.constants = correction_constants(sp, -1, ode);
    const double smin = -2.0 * p.delta1 / p.mu_tilde;
    for (std::size_t i = 0; i < npts; ++i) bc.s.push_back(smin * double(i) / double(npts - 1));
    bc.states = integrate_stack(sp, bc.s, true, ode);
    const double mt = p.mu_tilde;
    for (const auto& st : bc.states) {
        bc.r.push_back(1.0 + mt * st.s);
        bc.alpha.push_back(st.alpha);
        bc.dalpha.push_back(st.alpha_s / mt);
        bc.v.push_back(mt * st.v);
        bc.dv.push_back(st.vs);
        bc.beta.push_back(st.beta);
        bc.dbeta.push_back(st.beta_s / mt);
        bc.z.push_back(mt * mt * st.z);
        bc.dz.push_back(mt * st.zs);
    }
    return bc;
}

/// Single-layer approximation: singular Green profile at 0 with a boundary layer at r = 1.
struct SingleLayerAnsatz {
    AnsatzParams params;
    OuterSolution outer;
    Ansatz ansatz;
};

inline SingleLayerAnsatz build_ansatz(double lambda, const AnsatzOptions& opt = {}) {
    validate_eta(opt.eta);
    SingleLayerAnsatz s;
    s.outer = outer_u2(lambda, opt);
    Ansatz& a = s.ansatz;
    a.lambda = lambda;
    a.eps = s.outer.eps;
    a.eta = opt.eta;
    a.ode = opt.ode;
    a.outer = s.outer.green;
    detail::set_inner(a, s.outer.r_tilde, s.outer.H0);
    a.peaks.push_back({StackParams{1.0, a.eps * s.outer.gamma, a.eps, lambda}, true, false});
    detail::check_layout(a);

    AnsatzParams& p = s.params;
    p.lambda = lambda;
    p.eps = a.eps;
    p.eta = opt.eta;
    p.delta = a.delta;
    p.delta1 = a.delta1;
    p.mu = a.inner.mu();
    p.gamma_eps = s.outer.gamma;
    p.mu_tilde = a.eps * s.outer.gamma;
    p.r_tilde = s.outer.r_tilde;
    p.H0 = s.outer.H0;
    p.H0_negative = p.H0 < 0.0;
    p.A = s.outer.A;
    p.B = s.outer.B;
    p.constants = s.outer.constants;
    p.validate();
    return s;
}

/// k-layer approximation built on the perturbed Green's function of the layer equations.
struct MultilayerAnsatz {
    Ansatz ansatz;
    LayerSolution layers;
    LayerParameters parameters;
    LayerConstants constants;
    double b = 0.0;
    double r_tilde = 0.0, H0 = 0.0;
};

inline MultilayerAnsatz multilayer_ansatz(int k, double lambda, OuterMode mode, const AnsatzOptions& opt = {}) {
    validate_eta(opt.eta);
    MultilayerAnsatz M;
    const double eps = solve_epsilon(lambda);
    M.b = 4.0 * eps / std::numbers::sqrt2;
    LayerSolveOptions lo;
    lo.b_max = 0.5;
    M.layers = solve_layers(k, M.b, mode, lo);
    const auto& alphas = M.layers.config.alphas;
    const auto radii = M.layers.config.layer_radii();
    const std::size_t m = radii.size();

    LayerParameterOptions po;
    po.eps_max = 0.2;
    M.constants.zeta1.resize(m);
    M.constants.nu2.resize(m);
    std::vector<double> gam(m);
    for (std::size_t i = 0; i < m; ++i) gam[i] = 1.0 / M.layers.green.left_deriv(i);
    for (int pass = 0; pass < 3; ++pass) {
        for (std::size_t i = 0; i < m; ++i) {
            const auto c = correction_constants({radii[i], eps * gam[i], eps, lambda}, -1, opt.ode);
            M.constants.zeta1[i] = c.zeta1;
            M.constants.nu2[i] = c.nu2;
        }
        M.parameters = solve_layer_parameters(alphas, M.b, eps, mode, M.constants, po);
        for (std::size_t i = 0; i < m; ++i) gam[i] = -M.parameters.gamma[i];
    }
    for (double g : gam)
        if (!(g > 0.0)) throw MatchingError("multilayer_ansatz: nonpositive layer scale");

    PerturbedGreenSpec spec{alphas, std::vector<double>(m), M.parameters.sigma, M.b, eps, mode};
    for (std::size_t i = 0; i < m; ++i) spec.a[i] = detail::phi_value(M.parameters.gamma[i], eps, M.constants.nu2[i]);

    Ansatz& a = M.ansatz;
    a.lambda = lambda;
    a.eps = eps;
    a.eta = opt.eta;
    a.ode = opt.ode;
    a.outer = perturbed_green(spec);
    M.r_tilde = detail::critical_radius(a.outer);
    M.H0 = std::numbers::sqrt2 / eps * detail::regular_part_at_0(a.outer);
    detail::set_inner(a, M.r_tilde, M.H0);
    const std::size_t kfree = free_layer_count(a.outer);
    for (std::size_t i = 0; i < m; ++i)
        a.peaks.push_back({StackParams{a.outer.layers[i], eps * gam[i], eps, lambda}, true, i < kfree});
    detail::check_layout(a);
    return M;
}

}  // namespace kslayers
