#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"
#include "specfun.hpp"

namespace kslayers {

enum class OuterMode { dirichlet_one, neumann };

inline const char* to_string(OuterMode m) { return m == OuterMode::neumann ? "neumann" : "dirichlet"; }

inline OuterMode parse_outer_mode(const std::string& s) {
    if (s == "neumann") return OuterMode::neumann;
    if (s == "dirichlet" || s == "dirichlet_one") return OuterMode::dirichlet_one;
    throw DomainError("outer mode must be 'dirichlet' or 'neumann', got '" + s + "'");
}

/// Default bound on the singular coefficient.
inline constexpr double kBMax = 0.2;
/// Default bound on the layer count.
inline constexpr int kKMax = 8;

/// Coefficients of c_K K0 + c_I I0.
struct AnnulusCoeffs {
    double cK = 0.0;
    double cI = 0.0;
    double cond = 1.0;
};

/// Two-point solve in the {K0, I0} basis on [r_left, r_right].
inline AnnulusCoeffs annulus_solution(double r_left, double r_right, double v_left, double v_right) {
    if (!(r_left > 0.0) || !(r_right > r_left) || r_right > 1.0 || !std::isfinite(v_left) ||
        !std::isfinite(v_right))
        throw DomainError("annulus_solution: need 0 < r_left < r_right <= 1 and finite data");
    const BesselEval l = modified_bessel(r_left);
    const BesselEval r = modified_bessel(r_right);
    const double det = l.K0 * r.I0 - l.I0 * r.K0;
    const double nA = std::max(std::abs(l.K0) + std::abs(l.I0), std::abs(r.K0) + std::abs(r.I0));
    const double nInv = std::max(std::abs(r.I0) + std::abs(l.I0), std::abs(r.K0) + std::abs(l.K0)) / std::abs(det);
    const double cond = nA * nInv;
    if (!std::isfinite(cond) || cond > 1e12) throw ConditioningError("annulus_solution: degenerate annulus", cond);
    AnnulusCoeffs c;
    c.cK = (v_left * r.I0 - l.I0 * v_right) / det;
    c.cI = (l.K0 * v_right - v_left * r.K0) / det;
    c.cond = cond;
    return c;
}

/// One annulus of a piecewise solution.
struct GreenPiece {
    enum class Kind { inner, annulus, neumann_tail };
    Kind kind;
    double lo, hi;
    double cK, cI;
};

/// Piecewise solution of -u'' - u'/r + u = 0 with a -b ln r singularity at 0.
/// `layers` are the radii carrying prescribed values (for dirichlet_one the last is 1).
struct PiecewiseGreen {
    std::vector<double> interfaces;  ///< 0, layer radii..., 1
    std::vector<GreenPiece> pieces;
    std::vector<double> layers;
    std::vector<double> layer_values;
    double b_sing = 0.0;
    OuterMode outer_mode = OuterMode::dirichlet_one;

    std::size_t piece_index(double r) const {
        for (std::size_t j = 0; j + 1 < pieces.size(); ++j)
            if (r < pieces[j].hi) return j;
        return pieces.size() - 1;
    }

    static double eval(const GreenPiece& p, double r, int order) {
        const BesselEval e = modified_bessel(r);
        const double u = p.cK * e.K0 + p.cI * e.I0;
        const double du = p.cK * e.K0p + p.cI * e.I0p;
        if (order == 0) return u;
        if (order == 1) return du;
        return u - du / r;
    }

    double value(double r) const { return eval(pieces[piece_index(r)], r, 0); }
    double deriv(double r) const { return eval(pieces[piece_index(r)], r, 1); }
    double deriv2(double r) const { return eval(pieces[piece_index(r)], r, 2); }

    /// One-sided derivative at layer i (0-based) from the left piece.
    double left_deriv(std::size_t i) const { return eval(pieces[i], layers[i], 1); }
    /// One-sided derivative at layer i from the right piece (requires a right piece).
    double right_deriv(std::size_t i) const { return eval(pieces[i + 1], layers[i], 1); }
    bool has_right(std::size_t i) const { return i + 1 < pieces.size(); }
};

/// Builds the piecewise solution with prescribed values at the layer radii.
inline PiecewiseGreen build_piecewise(const std::vector<double>& layers, const std::vector<double>& values,
                                      double b, OuterMode mode) {
    const std::size_t m = layers.size();
    if (m == 0 || values.size() != m) throw DomainError("build_piecewise: need matching nonempty layers/values");
    for (std::size_t i = 0; i < m; ++i) {
        const double lo = i == 0 ? 0.0 : layers[i - 1];
        if (!(layers[i] > lo) || layers[i] > 1.0) throw DomainError("build_piecewise: layer radii must increase in (0,1]");
    }
    if (mode == OuterMode::dirichlet_one && layers.back() != 1.0)
        throw DomainError("build_piecewise: dirichlet_one requires the last layer at r = 1");
    if (mode == OuterMode::neumann && !(layers.back() < 1.0))
        throw DomainError("build_piecewise: neumann layers must lie inside (0,1)");

    PiecewiseGreen g;
    g.layers = layers;
    g.layer_values = values;
    g.b_sing = b;
    g.outer_mode = mode;
    g.interfaces.push_back(0.0);
    for (double a : layers) g.interfaces.push_back(a);
    if (mode == OuterMode::neumann) g.interfaces.push_back(1.0);

    {
        const BesselEval e = modified_bessel(layers[0]);
        g.pieces.push_back({GreenPiece::Kind::inner, 0.0, layers[0], b, (values[0] - b * e.K0) / e.I0});
    }
    for (std::size_t i = 0; i + 1 < m; ++i) {
        const AnnulusCoeffs c = annulus_solution(layers[i], layers[i + 1], values[i], values[i + 1]);
        g.pieces.push_back({GreenPiece::Kind::annulus, layers[i], layers[i + 1], c.cK, c.cI});
    }
    if (mode == OuterMode::neumann) {
        const BesselPair z = xi_zeta(layers.back());
        const double s = values.back() / z.zeta;
        g.pieces.push_back({GreenPiece::Kind::neumann_tail, layers.back(), 1.0, s, s * z.c_mix});
    }
    return g;
}

/// Coefficients of the homogeneous piece solution with unit value at one endpoint
/// and the piece's other condition homogeneous.
inline AnnulusCoeffs endpoint_basis(const GreenPiece& p, bool at_left) {
    switch (p.kind) {
        case GreenPiece::Kind::inner: {
            if (at_left) throw DomainError("endpoint_basis: inner piece has no left value condition");
            const BesselEval e = modified_bessel(p.hi);
            return {0.0, 1.0 / e.I0, 1.0};
        }
        case GreenPiece::Kind::annulus:
            return at_left ? annulus_solution(p.lo, p.hi, 1.0, 0.0) : annulus_solution(p.lo, p.hi, 0.0, 1.0);
        case GreenPiece::Kind::neumann_tail: {
            if (!at_left) throw DomainError("endpoint_basis: Neumann tail has no right value condition");
            const BesselPair z = xi_zeta(p.lo);
            return {1.0 / z.zeta, z.c_mix / z.zeta, 1.0};
        }
    }
    return {};
}

namespace detail {

inline double coeff_deriv(const AnnulusCoeffs& c, double r) {
    const BesselEval e = modified_bessel(r);
    return c.cK * e.K0p + c.cI * e.I0p;
}

inline double piece_d(const GreenPiece& p, double r, int order) { return PiecewiseGreen::eval(p, r, order); }

/// d/dR_j of u_p'(R_i) where both R_i and R_j are endpoints of piece p (values held fixed).
inline double piece_shift_derivative(const GreenPiece& p, bool eval_at_left, bool shift_left) {
    const double ri = eval_at_left ? p.lo : p.hi;
    const double rj = shift_left ? p.lo : p.hi;
    const AnnulusCoeffs phi = endpoint_basis(p, shift_left);
    double d = coeff_deriv(phi, ri) * (-piece_d(p, rj, 1));
    if (eval_at_left == shift_left) d += piece_d(p, ri, 2);
    return d;
}

}  // namespace detail

/// Derivatives of the one-sided fluxes at layer i with respect to shifting layer j.
/// Returns (d U'^-(R_i)/dR_j, d U'^+(R_i)/dR_j); the second is 0 when no right piece exists.
inline std::pair<double, double> flux_shift_derivatives(const PiecewiseGreen& g, std::size_t i, std::size_t j) {
    double dminus = 0.0, dplus = 0.0;
    // Left piece of layer i is pieces[i] (endpoints layers[i-1], layers[i]).
    if (j == i) {
        dminus = detail::piece_shift_derivative(g.pieces[i], false, false);
    } else if (i > 0 && j + 1 == i) {
        dminus = detail::piece_shift_derivative(g.pieces[i], false, true);
    }
    if (g.has_right(i)) {
        const GreenPiece& p = g.pieces[i + 1];
        if (j == i) {
            dplus = detail::piece_shift_derivative(p, true, true);
        } else if (j == i + 1 && p.kind == GreenPiece::Kind::annulus) {
            dplus = detail::piece_shift_derivative(p, true, false);
        }
    }
    return {dminus, dplus};
}

/// Free layers: all layers for neumann, all but r = 1 for dirichlet_one.
inline std::size_t free_layer_count(const PiecewiseGreen& g) {
    return g.outer_mode == OuterMode::neumann ? g.layers.size() : g.layers.size() - 1;
}

/// Candidate layer configuration (k free layers).
struct LayerConfig {
    int k = 0;
    std::vector<double> alphas;  ///< free layer radii
    double b = 0.0;
    OuterMode outer_mode = OuterMode::dirichlet_one;
    double residual = 0.0;
    int iterations = 0;

    std::vector<double> layer_radii() const {
        std::vector<double> r = alphas;
        if (outer_mode == OuterMode::dirichlet_one) r.push_back(1.0);
        return r;
    }
};

inline PiecewiseGreen green_of(const LayerConfig& c) {
    const auto radii = c.layer_radii();
    return build_piecewise(radii, std::vector<double>(radii.size(), 1.0), c.b, c.outer_mode);
}

inline void check_candidate(const LayerConfig& c) {
    double prev = 0.0;
    for (double a : c.alphas) {
        if (!std::isfinite(a) || !(a > prev) || !(a < 1.0))
            throw DomainError("reflection_residual: layer radii must be strictly increasing inside (0,1)");
        prev = a;
    }
    if (c.outer_mode == OuterMode::neumann && c.alphas.empty())
        throw DomainError("reflection_residual: neumann mode needs at least one layer");
}

/// Reflection-law defects U'^+(α_i) + U'^-(α_i) at every free layer.
inline std::vector<double> reflection_residual(const LayerConfig& c) {
    check_candidate(c);
    const PiecewiseGreen g = green_of(c);
    std::vector<double> d(c.alphas.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = g.left_deriv(i) + g.right_deriv(i);
    return d;
}

/// Jacobian of the defect vector with respect to the free radii (tridiagonal).
inline Tridiag defect_jacobian(const PiecewiseGreen& g) {
    const std::size_t k = free_layer_count(g);
    Tridiag t(k);
    for (std::size_t i = 0; i < k; ++i) {
        auto [dm, dp] = flux_shift_derivatives(g, i, i);
        t.diag[i] = dm + dp;
        if (i + 1 < k) {
            auto [dm1, dp1] = flux_shift_derivatives(g, i, i + 1);
            t.sup[i] = dm1 + dp1;
            auto [dm2, dp2] = flux_shift_derivatives(g, i + 1, i);
            t.sub[i] = dm2 + dp2;
        }
    }
    return t;
}

enum class LayerMethod { automatic, newton, bisection };

struct LayerSolveOptions {
    double b_max = kBMax;
    int k_max = kKMax;
    int max_iterations = 60;
    double step_tol = 1e-12;
    double residual_tol = 1e-10;
    LayerMethod method = LayerMethod::automatic;
};

struct LayerSolution {
    LayerConfig config;
    PiecewiseGreen green;
};

namespace detail {

inline double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

inline LayerConfig bisect_one_layer(double b, OuterMode mode) {
    LayerConfig c;
    c.k = 1;
    c.b = b;
    c.outer_mode = mode;
    auto f = [&](double a) {
        c.alphas = {a};
        return reflection_residual(c)[0];
    };
    double lo = 1e-9, hi = 1.0 - 1e-9;
    double flo = f(lo), fhi = f(hi);
    if (!(flo < 0.0 && fhi > 0.0)) throw ConvergenceError("solve_layers: defect has no sign change", std::min(std::abs(flo), std::abs(fhi)), 0);
    int it = 0;
    while (hi - lo > 1e-15 && it < 200) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        (fm < 0.0 ? lo : hi) = mid;
        ++it;
    }
    c.alphas = {0.5 * (lo + hi)};
    c.residual = std::abs(f(c.alphas[0]));
    c.iterations = it;
    return c;
}

inline LayerConfig newton_layers(int k, double b, OuterMode mode, const LayerSolveOptions& opt,
                                 std::vector<double> guess) {
    LayerConfig c;
    c.k = k;
    c.b = b;
    c.outer_mode = mode;
    c.alphas = std::move(guess);
    auto defect = reflection_residual(c);
    double res = max_abs(defect);
    for (int it = 1; it <= opt.max_iterations; ++it) {
        const PiecewiseGreen g = green_of(c);
        const TridiagLU lu(defect_jacobian(g));
        if (lu.singular()) throw ConvergenceError("solve_layers: singular defect Jacobian", res, it);
        auto step = lu.solve(defect);
        double t = 1.0;
        LayerConfig trial = c;
        double trial_res = INFINITY;
        std::vector<double> trial_def;
        for (int h = 0; h < 40; ++h, t *= 0.5) {
            bool ok = true;
            double prev = 0.0;
            for (int i = 0; i < k; ++i) {
                trial.alphas[i] = c.alphas[i] - t * step[i];
                if (!(trial.alphas[i] > prev) || !(trial.alphas[i] < 1.0)) ok = false;
                prev = trial.alphas[i];
            }
            if (!ok) continue;
            trial_def = reflection_residual(trial);
            trial_res = max_abs(trial_def);
            if (trial_res < res || trial_res <= opt.residual_tol) break;
        }
        if (!std::isfinite(trial_res) || (trial_res >= res && trial_res > opt.residual_tol))
            throw ConvergenceError("solve_layers: damped Newton stalled", res, it);
        const double step_norm = t * max_abs(step);
        c = trial;
        defect = trial_def;
        res = trial_res;
        c.iterations = it;
        if (res <= opt.residual_tol && step_norm <= opt.step_tol) break;
        if (res <= 1e-15) break;
    }
    c.residual = res;
    if (res > opt.residual_tol)
        throw ConvergenceError("solve_layers: Newton did not converge", res, opt.max_iterations);
    return c;
}

}  // namespace detail

/// Solves the reflection laws for k free layers with singular coefficient b.
/// For dirichlet_one, k = 0 returns the singular Green's function (value 1 at r = 1).
inline LayerSolution solve_layers(int k, double b, OuterMode mode, const LayerSolveOptions& opt = {}) {
    if (!std::isfinite(b) || b <= 0.0 || b > opt.b_max)
        throw DomainError("solve_layers: b must lie in (0, b_max]");
    if (k < 0 || k > opt.k_max || (k == 0 && mode == OuterMode::neumann))
        throw DomainError("solve_layers: layer count outside the admissible range");
    LayerConfig c;
    if (k == 0) {
        c.b = b;
        c.outer_mode = mode;
    } else {
        const bool bisect = opt.method == LayerMethod::bisection ||
                            (opt.method == LayerMethod::automatic && k == 1);
        if (bisect) {
            if (k != 1) throw DomainError("solve_layers: bisection applies to one layer only");
            c = detail::bisect_one_layer(b, mode);
        } else {
            std::vector<double> guess(k);
            for (int i = 0; i < k; ++i) guess[i] = double(i + 1) / (k + 1);
            c = detail::newton_layers(k, b, mode, opt, guess);
        }
    }
    return {c, green_of(c)};
}

/// The singular Green's function G with -b̃ ln r behaviour at 0 and G(1) = 1.
struct SingularGreen {
    PiecewiseGreen green;
    double b_tilde = 0.0;
    double r_tilde = 0.0;        ///< unique zero of G'
    double r_tilde_direct = 0.0; ///< same zero by bisection on G'
    double c0 = 0.0;             ///< leading coefficient of b̃ ≈ c0 r̃²
    double limit_constant = 0.0; ///< lim (G + b̃ ln r)
    int iterations = 0;
};

/// b̃ as a function of the radius where G' vanishes.
inline double singular_coefficient_of_radius(double rb) {
    const BesselPair p = xi_zeta(rb);
    const BesselPair one = xi_zeta(1.0);
    return p.xip / (p.xip * one.zeta - one.xi * p.zetap);
}

inline SingularGreen green_singular(double b_tilde, double b_max = kBMax) {
    if (!std::isfinite(b_tilde) || b_tilde <= 0.0) throw DomainError("green_singular: b_tilde must be positive");
    if (b_tilde > b_max) throw CalibrationError("green_singular: b_tilde exceeds b_max = " + std::to_string(b_max));
    SingularGreen s;
    s.b_tilde = b_tilde;
    s.green = build_piecewise({1.0}, {1.0}, b_tilde, OuterMode::dirichlet_one);
    const GreenPiece& p = s.green.pieces[0];
    if (!(p.cI > 0.0) || !(PiecewiseGreen::eval(p, 1.0, 1) > 0.0))
        throw CalibrationError("green_singular: no interior critical point for this b_tilde");

    // Direct zero of G' by bisection.
    double lo = 1e-12, hi = 1.0;
    for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
        const double mid = 0.5 * (lo + hi);
        (PiecewiseGreen::eval(p, mid, 1) < 0.0 ? lo : hi) = mid;
    }
    s.r_tilde_direct = 0.5 * (lo + hi);

    // Newton on the closed-form calibration b̃(r) = b̃, started from the quadratic law.
    const double i01 = modified_bessel(1.0).I0;
    s.c0 = 1.0 / (2.0 * i01);
    double r = std::min(std::sqrt(b_tilde / s.c0), 0.9);
    int it = 0;
    for (; it < 100; ++it) {
        const double f = singular_coefficient_of_radius(r) - b_tilde;
        const double h = 1e-7 * r;
        const double df = (singular_coefficient_of_radius(r + h) - singular_coefficient_of_radius(r - h)) / (2 * h);
        double rn = r - f / df;
        if (!(rn > 0.0)) rn = 0.5 * r;
        if (rn >= 1.0) rn = 0.5 * (r + 1.0);
        const bool done = std::abs(rn - r) <= 1e-15 * r;
        r = rn;
        if (done) break;
    }
    s.iterations = it;
    if (std::abs(singular_coefficient_of_radius(r) - b_tilde) > 1e-12 * b_tilde)
        throw CalibrationError("green_singular: calibration Newton failed");
    if (std::abs(r - s.r_tilde_direct) > 1e-9 * std::max(r, 1e-3))
        throw ConsistencyError("green_singular: calibration radius disagrees with zero of G'", r - s.r_tilde_direct);
    s.r_tilde = r;
    s.limit_constant = p.cI - b_tilde * (kEulerGamma - std::log(2.0));
    return s;
}

}  // namespace kslayers
