#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "errors.hpp"
#include "greens.hpp"
#include "linalg.hpp"

namespace kslayers {

/// Green's function with shifted layers α_i + σ_i carrying values 1 + ε a_i.
/// `a` and `sigma` are indexed by layer radius (for dirichlet_one the last entry is r = 1).
struct PerturbedGreenSpec {
    std::vector<double> alphas;  ///< free base radii
    std::vector<double> a;
    std::vector<double> sigma;
    double b = 0.0;
    double eps = 0.0;
    OuterMode outer_mode = OuterMode::dirichlet_one;
};

inline std::size_t layer_count(const std::vector<double>& alphas, OuterMode mode) {
    return alphas.size() + (mode == OuterMode::dirichlet_one ? 1 : 0);
}

/// Open window for the shift of free layer i: (-(α_i - α_{i-1})/4, (α_{i+1} - α_i)/4).
inline std::pair<double, double> sigma_window(const std::vector<double>& alphas, std::size_t i) {
    const double prev = i == 0 ? 0.0 : alphas[i - 1];
    const double next = i + 1 < alphas.size() ? alphas[i + 1] : 1.0;
    return {-(alphas[i] - prev) / 4.0, (next - alphas[i]) / 4.0};
}

inline void validate(const PerturbedGreenSpec& s) {
    const std::size_t m = layer_count(s.alphas, s.outer_mode);
    if (s.a.size() != m || s.sigma.size() != m)
        throw DomainError("perturbed_green: a and sigma need one entry per layer radius");
    if (!std::isfinite(s.eps) || s.eps < 0.0) throw DomainError("perturbed_green: eps must be >= 0");
    for (std::size_t i = 0; i < s.alphas.size(); ++i) {
        const auto [lo, hi] = sigma_window(s.alphas, i);
        if (!(s.sigma[i] > lo && s.sigma[i] < hi))
            throw DomainError("perturbed_green: shift of layer " + std::to_string(i + 1) + " outside its window");
    }
    if (s.outer_mode == OuterMode::dirichlet_one && s.sigma.back() != 0.0)
        throw DomainError("perturbed_green: the interface at r = 1 is never shifted");
}

inline PiecewiseGreen perturbed_green(const PerturbedGreenSpec& s) {
    validate(s);
    const std::size_t m = s.a.size();
    std::vector<double> radii(m), values(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double base = i < s.alphas.size() ? s.alphas[i] : 1.0;
        radii[i] = base + s.sigma[i];
        values[i] = 1.0 + s.eps * s.a[i];
    }
    return build_piecewise(radii, values, s.b, s.outer_mode);
}

struct NondegenMatrix {
    int k = 0;
    Tridiag entries;
    double det = 0.0;
    double cond = 0.0;
    double fd_max_rel = 0.0;  ///< worst analytic vs finite-difference disagreement
};

/// Full cofactor-expansion determinant of a dense matrix (reference path).
inline double cofactor_det(const DenseMatrix& m) {
    const std::size_t n = m.n;
    if (n == 0) return 1.0;
    if (n == 1) return m(0, 0);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (m(0, j) == 0.0) continue;
        DenseMatrix minor(n - 1);
        for (std::size_t i = 1; i < n; ++i)
            for (std::size_t c = 0, cc = 0; c < n; ++c)
                if (c != j) minor(i - 1, cc++) = m(i, c);
        s += ((j % 2) ? -1.0 : 1.0) * m(0, j) * cofactor_det(minor);
    }
    return s;
}

inline DenseMatrix to_dense(const Tridiag& t) {
    DenseMatrix d(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        d(i, i) = t.diag[i];
        if (i + 1 < t.size()) {
            d(i, i + 1) = t.sup[i];
            d(i + 1, i) = t.sub[i];
        }
    }
    return d;
}

/// Reflection defects of a perturbed configuration at its (shifted) free layers.
inline std::vector<double> perturbed_defects(const PerturbedGreenSpec& s) {
    const PiecewiseGreen g = perturbed_green(s);
    std::vector<double> d(s.alphas.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = g.left_deriv(i) + g.right_deriv(i);
    return d;
}

/// Finite-difference A_k from central differences of perturbed_green.
inline DenseMatrix fd_Ak(const std::vector<double>& alphas, double b, OuterMode mode, double h = 1e-6) {
    const std::size_t k = alphas.size();
    const std::size_t m = layer_count(alphas, mode);
    DenseMatrix fd(k);
    PerturbedGreenSpec s{alphas, std::vector<double>(m, 0.0), std::vector<double>(m, 0.0), b, 0.0, mode};
    for (std::size_t j = 0; j < k; ++j) {
        s.sigma[j] = h;
        const auto dp = perturbed_defects(s);
        s.sigma[j] = -h;
        const auto dm = perturbed_defects(s);
        s.sigma[j] = 0.0;
        for (std::size_t i = 0; i < k; ++i) fd(i, j) = (dp[i] - dm[i]) / (2.0 * h);
    }
    return fd;
}

/// Assembles A_k analytically and cross-checks it against finite differences.
inline NondegenMatrix assemble_Ak(const std::vector<double>& alphas, double b, OuterMode mode,
                                  double fd_tol = 1e-5) {
    LayerConfig c;
    c.k = static_cast<int>(alphas.size());
    c.alphas = alphas;
    c.b = b;
    c.outer_mode = mode;
    check_candidate(c);
    const PiecewiseGreen g = green_of(c);
    NondegenMatrix nm;
    nm.k = c.k;
    nm.entries = defect_jacobian(g);
    const DenseMatrix dense = to_dense(nm.entries);
    nm.det = tridiag_det(nm.entries);
    nm.cond = condition1(dense);

    const DenseMatrix fd = fd_Ak(alphas, b, mode);
    double scale = 0.0;
    for (double v : dense.a) scale = std::max(scale, std::abs(v));
    double worst = 0.0;
    for (std::size_t i = 0; i < dense.n; ++i)
        for (std::size_t j = 0; j < dense.n; ++j) {
            const double an = dense(i, j), f = fd(i, j);
            const double den = std::max({std::abs(an), std::abs(f), 1e-6 * scale});
            worst = std::max(worst, std::abs(an - f) / den);
        }
    nm.fd_max_rel = worst;
    if (worst > fd_tol)
        throw ConsistencyError("assemble_Ak: analytic and finite-difference entries disagree", worst);
    return nm;
}

/// M_k by the three-term recurrence.
inline double det_Mk(const NondegenMatrix& m) { return tridiag_det(m.entries); }

struct MkRow {
    int k;
    double b;
    double Mk;
    double cond;
};

/// M_k for one (k, b).
inline MkRow mk_sweep_row(int k, double b, OuterMode mode) {
    LayerSolveOptions o;
    o.b_max = std::max(o.b_max, b);
    o.k_max = std::max(o.k_max, k);
    const auto sol = solve_layers(k, b, mode, o);
    const auto nm = assemble_Ak(sol.config.alphas, b, mode);
    return {k, b, det_Mk(nm), nm.cond};
}

/// M_k for k = 1..k_max over the given b values.
inline std::vector<MkRow> mk_sweep(int k_max, const std::vector<double>& bs, OuterMode mode) {
    std::vector<MkRow> rows;
    for (int k = 1; k <= k_max; ++k)
        for (double b : bs) rows.push_back(mk_sweep_row(k, b, mode));
    return rows;
}

/// Constants entering the layer equations, one per layer radius.
struct LayerConstants {
    std::vector<double> zeta1;
    std::vector<double> nu2;
};

struct LayerParameters {
    std::vector<double> gamma;   ///< one per layer radius
    std::vector<double> sigma;   ///< one per layer radius (last is 0 for dirichlet_one)
    std::vector<double> gamma0;  ///< base point -1/U'^-(α_i)
    double residual = 0.0;
    int iterations = 0;
    DenseMatrix N;               ///< Jacobian of H at the base point
    double detN = 0.0;
    double Mk = 0.0;             ///< determinant of A over the free layers
    double flux_product = 0.0;   ///< Π |U'^-(α_i)|²

    /// Sign s in det N = s Π|U'^-(α_i)|² M, where m counts layer radii.
    static double expected_sign(std::size_t m) { return ((m * (m + 1) / 2) % 2) ? -1.0 : 1.0; }
};

struct LayerParameterOptions {
    double eps_max = 0.05;
    int n = 2;
    int max_iterations = 60;
    double tol = 1e-10;
    double det_threshold = 1e-8;
};

namespace detail {

inline double phi_flux(double x, double t, double eps, double zeta1, int n) {
    return (2.0 * (n - 1) / t - 2.0 * x * std::numbers::ln2 - eps * x * zeta1) / std::numbers::sqrt2;
}

inline double phi_value(double x, double eps, double nu2) {
    return (-std::log(x * x) + eps * x * nu2) / std::numbers::sqrt2;
}

/// Number of equations/unknowns of H for k free layers and m radii.
struct HLayout {
    std::size_t k, m;
    std::size_t size() const { return m + k; }
};

inline std::vector<double> eval_H(const std::vector<double>& alphas, double b, double eps, OuterMode mode,
                                  const LayerConstants& c, int n, const std::vector<double>& z) {
    const std::size_t k = alphas.size();
    const std::size_t m = layer_count(alphas, mode);
    PerturbedGreenSpec s{alphas, std::vector<double>(m), std::vector<double>(m, 0.0), b, eps, mode};
    for (std::size_t i = 0; i < m; ++i) s.a[i] = phi_value(z[i], eps, c.nu2[i]);
    for (std::size_t i = 0; i < k; ++i) s.sigma[i] = z[m + i];
    const PiecewiseGreen g = perturbed_green(s);
    std::vector<double> h;
    h.reserve(m + k);
    for (std::size_t i = 0; i < m; ++i) {
        const double t = g.layers[i];
        const double phi = eps * phi_flux(z[i], t, eps, c.zeta1[i], n);
        h.push_back(g.left_deriv(i) - (-1.0 / z[i] + phi));
        if (i < k) h.push_back(g.right_deriv(i) - (1.0 / z[i] + phi));
    }
    return h;
}

}  // namespace detail

/// Analytic Jacobian of H at ε = 0, σ = 0, x = base point.
inline DenseMatrix base_jacobian_N(const PiecewiseGreen& g) {
    const std::size_t m = g.layers.size();
    const std::size_t k = free_layer_count(g);
    DenseMatrix N(m + k);
    std::size_t row = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const double x = -1.0 / g.left_deriv(i);
        N(row, i) = -1.0 / (x * x);
        for (std::size_t j = 0; j < k; ++j) N(row, m + j) = flux_shift_derivatives(g, i, j).first;
        ++row;
        if (i < k) {
            N(row, i) = 1.0 / (x * x);
            for (std::size_t j = 0; j < k; ++j) N(row, m + j) = flux_shift_derivatives(g, i, j).second;
            ++row;
        }
    }
    return N;
}

/// Solves H(ε; x; σ) = 0 for the bubble scales γ and layer shifts σ.
inline LayerParameters solve_layer_parameters(const std::vector<double>& alphas, double b, double eps,
                                              OuterMode mode, const LayerConstants& consts,
                                              const LayerParameterOptions& opt = {}) {
    if (!std::isfinite(eps) || eps < 0.0 || eps > opt.eps_max)
        throw DomainError("solve_layer_parameters: eps outside [0, eps_max]");
    const std::size_t k = alphas.size();
    const std::size_t m = layer_count(alphas, mode);
    if (consts.zeta1.size() != m || consts.nu2.size() != m)
        throw DomainError("solve_layer_parameters: one constant pair per layer radius required");

    LayerConfig cfg;
    cfg.k = static_cast<int>(k);
    cfg.alphas = alphas;
    cfg.b = b;
    cfg.outer_mode = mode;
    check_candidate(cfg);
    const PiecewiseGreen g = green_of(cfg);

    LayerParameters out;
    out.gamma0.resize(m);
    out.flux_product = 1.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double um = g.left_deriv(i);
        out.gamma0[i] = -1.0 / um;
        out.flux_product *= um * um;
    }
    out.N = base_jacobian_N(g);
    out.detN = DenseLU(out.N).det();
    out.Mk = k > 0 ? tridiag_det(defect_jacobian(g)) : 1.0;
    if (std::abs(out.Mk) < opt.det_threshold)
        throw NondegeneracyError("solve_layer_parameters: determinant too small, Newton refused", out.Mk);

    std::vector<double> z(m + k, 0.0);
    for (std::size_t i = 0; i < m; ++i) z[i] = out.gamma0[i];

    auto H = [&](const std::vector<double>& zz) {
        try {
            return detail::eval_H(alphas, b, eps, mode, consts, opt.n, zz);
        } catch (const DomainError&) {
            throw ConvergenceError("solve_layer_parameters: iterate left the admissible shift window", INFINITY, 0);
        }
    };
    auto norm = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s = std::max(s, std::abs(x));
        return s;
    };
    auto inside = [&](const std::vector<double>& zz) {
        for (std::size_t i = 0; i < m; ++i)
            if (!(zz[i] < 0.0) || !std::isfinite(zz[i])) return false;
        for (std::size_t i = 0; i < k; ++i) {
            const auto [lo, hi] = sigma_window(alphas, i);
            if (!(zz[m + i] > lo && zz[m + i] < hi)) return false;
        }
        return true;
    };

    std::vector<double> h = H(z);
    double res = norm(h);
    int it = 0;
    while (res > opt.tol * 1e-2 && it < opt.max_iterations) {
        ++it;
        DenseMatrix J(m + k);
        for (std::size_t j = 0; j < m + k; ++j) {
            const double step = 1e-7 * std::max(1.0, std::abs(z[j]));
            auto zp = z, zm = z;
            zp[j] += step;
            zm[j] -= step;
            const auto hp = H(zp), hm = H(zm);
            for (std::size_t i = 0; i < m + k; ++i) J(i, j) = (hp[i] - hm[i]) / (2.0 * step);
        }
        const DenseLU lu(J);
        if (lu.singular()) throw ConvergenceError("solve_layer_parameters: singular Jacobian", res, it);
        const auto dz = lu.solve(h);
        double t = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
            auto zt = z;
            for (std::size_t i = 0; i < zt.size(); ++i) zt[i] -= t * dz[i];
            if (!inside(zt)) continue;
            const auto ht = H(zt);
            const double rt = norm(ht);
            if (rt < res) {
                z = zt;
                h = ht;
                res = rt;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        if (t * norm(dz) < 1e-15) break;
    }
    out.residual = res;
    out.iterations = it;
    if (res > opt.tol) throw ConvergenceError("solve_layer_parameters: Newton did not converge", res, it);
    out.gamma.assign(z.begin(), z.begin() + m);
    out.sigma.assign(m, 0.0);
    for (std::size_t i = 0; i < k; ++i) out.sigma[i] = z[m + i];
    return out;
}

}  // namespace kslayers
