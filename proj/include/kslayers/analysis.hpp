#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"
#include "profile.hpp"

namespace kslayers {

/// Weight f_λ(r) = λ/(λ + (1 + r/√λ)^{-2-ν}).
struct NormParams {
    double nu = 0.5;
    double lambda = 1e-3;

    void validate() const {
        if (!(nu > 0.0 && nu < 1.0)) throw DomainError("NormParams: nu must lie in (0,1)");
        if (!(lambda > 0.0)) throw DomainError("NormParams: lambda must be positive");
    }

    double weight(double r) const {
        return lambda / (lambda + std::pow(1.0 + r / std::sqrt(lambda), -2.0 - nu));
    }
};

/// Plateau cutoffs: χ̃₁ = 1 on [0, 1/2] and 0 beyond 3/4; χ̃₂ = 0 on [0, 1/4] and 1 on [1/2, 1].
inline double chi1_tilde(double r) {
    double s, ds, dds;
    smoothstep((r - 0.5) / 0.25, s, ds, dds);
    return 1.0 - s;
}

inline double chi2_tilde(double r) {
    double s, ds, dds;
    smoothstep((r - 0.25) / 0.25, s, ds, dds);
    return s;
}

/// ‖u‖_⋆ = sup f_λ|u| over the grid.
inline double norm_weighted_sup(const std::vector<double>& r, const std::vector<double>& u, const NormParams& np) {
    double m = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) m = std::max(m, np.weight(r[i]) * std::abs(u[i]));
    return m;
}

inline double norm_sup(const std::vector<double>& u) {
    double m = 0.0;
    for (double x : u) m = std::max(m, std::abs(x));
    return m;
}

struct NormPair {
    double inner = 0.0;  ///< ‖χ̃₁u‖_⋆
    double outer = 0.0;  ///< ‖χ̃₂u‖_{L¹(B₁)}
    double star = 0.0;   ///< max(|log λ| inner, outer)
    double starstar = 0.0;
};

inline NormPair mixed_norms(const std::vector<double>& r, const std::vector<double>& u, const NormParams& np) {
    np.validate();
    std::vector<double> a(r.size()), b(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        a[i] = chi1_tilde(r[i]) * u[i];
        b[i] = chi2_tilde(r[i]) * u[i];
    }
    NormPair n;
    n.inner = norm_weighted_sup(r, a, np);
    n.outer = l1_disk(r, b);
    n.star = std::max(std::abs(std::log(np.lambda)) * n.inner, n.outer);
    n.starstar = std::max(n.inner, n.outer);
    return n;
}

struct ResidualReport {
    double sup_weighted_inner = 0.0;
    double l1_outer = 0.0;
    double star = 0.0;
    double starstar = 0.0;
    double sigma_fit = std::numeric_limits<double>::quiet_NaN();
    double l1_annulus = 0.0;  ///< ‖R‖_{L¹(B₁∖B_{1/2})}
    double sup_inner = 0.0;   ///< sup |R| on [0, δ]
    double sup_middle = std::numeric_limits<double>::quiet_NaN();  ///< sup |R| on [δ, 1 - 2δ₁]
    double sup_all = 0.0;
};

struct ResidualField {
    std::vector<double> R;
    ResidualReport report;
};

/// Optional region data for the pointwise regime checks.
struct Regions {
    double delta = 0.0;
    double delta1 = 0.0;
};

/// R(U) = -ΔU + U - λe^U from the profile's analytic derivatives.
inline ResidualField residual(const Profile& U, double lambda, const Regions* regions = nullptr, double nu = 0.5) {
    const std::size_t n = U.size();
    if (n < 3 || U.u.size() != n || U.d1.size() != n || U.d2.size() != n)
        throw DomainError("residual: incomplete profile");
    ResidualField out;
    out.R.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = U.r[i];
        const double lap = r > 0.0 ? U.d2[i] + U.d1[i] / r : 2.0 * U.d2[i];
        const double e = lambda * std::exp(U.u[i]);
        out.R[i] = -lap + U.u[i] - e;
        if (!std::isfinite(out.R[i])) throw OverflowError("residual: non-finite value", r);
    }
    ResidualReport& rep = out.report;
    const auto nrm = mixed_norms(U.r, out.R, {nu, lambda});
    rep.sup_weighted_inner = nrm.inner;
    rep.l1_outer = nrm.outer;
    rep.star = nrm.star;
    rep.starstar = nrm.starstar;
    rep.l1_annulus = l1_disk(U.r, out.R, 0.5, 1.0);
    rep.sup_all = norm_sup(out.R);
    if (regions) {
        rep.sup_middle = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = U.r[i];
            if (r <= regions->delta) rep.sup_inner = std::max(rep.sup_inner, std::abs(out.R[i]));
            if (r >= regions->delta && r <= 1.0 - 2.0 * regions->delta1)
                rep.sup_middle = std::max(rep.sup_middle, std::abs(out.R[i]));
        }
    }
    return out;
}

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw DomainError("loglog_slope: need at least two points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = double(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw DomainError("loglog_slope: values must be positive");
        const double a = std::log(x[i]), b = std::log(y[i]);
        sx += a, sy += b, sxx += a * a, sxy += a * b;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// N(φ) = λ(e^{U+φ} - e^U - e^Uφ).
inline std::vector<double> nonlinearity(const std::vector<double>& U, const std::vector<double>& phi, double lambda) {
    if (U.size() != phi.size()) throw DomainError("nonlinearity: size mismatch");
    if (norm_sup(phi) > 1.0) throw DomainError("nonlinearity: requires sup|phi| <= 1");
    std::vector<double> N(U.size());
    for (std::size_t i = 0; i < U.size(); ++i) {
        N[i] = lambda * std::exp(U[i]) * (std::expm1(phi[i]) - phi[i]);
        if (!std::isfinite(N[i])) throw OverflowError("nonlinearity: non-finite value", double(i));
    }
    return N;
}

/// z₀(r) = (r² - λμ²)/(r² + λμ²).
inline double kernel_mode(double r, double lambda, double mu) {
    if (!(r >= 0.0)) throw DomainError("kernel_mode: r must be nonnegative");
    const double m = lambda * mu * mu;
    return (r * r - m) / (r * r + m);
}

/// Potential 8λμ²/(λμ² + r²)² of the linearized bubble equation.
inline double kernel_potential(double r, double lambda, double mu) {
    const double m = lambda * mu * mu;
    const double q = m + r * r;
    return 8.0 * m / (q * q);
}

// ---------------------------------------------------------------------------------------------
// Linear theory: L(φ) = -Δφ + φ - λe^Uφ with φ'(0) = φ'(1) = 0.

/// Lumped finite-volume matrix of L on the profile grid (rows scaled by cell volume: symmetric).
inline Tridiag linear_operator_symmetric(const RadialFD& fd, const std::vector<double>& potential) {
    Tridiag t = fd.neg_laplacian();
    for (std::size_t i = 0; i < fd.size(); ++i) {
        const double v = fd.vol[i];
        t.diag[i] = v * (t.diag[i] + 1.0 - potential[i]);
        if (i + 1 < fd.size()) t.sup[i] *= v;
        if (i > 0) t.sub[i - 1] *= v;
    }
    return t;
}

struct LinearSolveResult {
    std::vector<double> phi;
    double phi_sup = 0.0;
    double h_star = 0.0;
    double h_starstar = 0.0;
    double ratio_star = 0.0;      ///< ‖φ‖_∞/‖h‖_*
    double ratio_starstar = 0.0;  ///< ‖φ‖_∞/‖h‖_**
    double min_pivot_ratio = 0.0;
};

/// Cut-off kernel mode χz₀ (χ = 1 for r below four bubble scales, smoothly to 0 at eight).
inline std::vector<double> cutoff_kernel(const std::vector<double>& r, double lambda, double mu) {
    const double s = mu * std::sqrt(lambda);
    std::vector<double> z(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        double S, dS, ddS;
        smoothstep((r[i] - 4.0 * s) / (4.0 * s), S, dS, ddS);
        z[i] = (1.0 - S) * kernel_mode(r[i], lambda, mu);
    }
    return z;
}

/// Smallest eigenvalue (in modulus) of the symmetric pencil (A, diag(vol)) by inverse iteration,
/// and the eigenvector; returns |eigenvalue|.
inline double smallest_mode(const Tridiag& A, const std::vector<double>& vol, std::vector<double>& vec) {
    const std::size_t n = A.size();
    Tridiag shifted = A;
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(A.diag[i]) / vol[i]);
    TridiagLU lu(shifted);
    if (lu.singular()) {
        for (std::size_t i = 0; i < n; ++i) shifted.diag[i] += 1e-13 * scale * vol[i];
        lu = TridiagLU(shifted);
    }
    vec.assign(n, 1.0);
    double est = 0.0;
    for (int it = 0; it < 60; ++it) {
        std::vector<double> b(n);
        for (std::size_t i = 0; i < n; ++i) b[i] = vol[i] * vec[i];
        auto y = lu.solve(b);
        double ny = 0.0, nv = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            ny += vol[i] * y[i] * y[i];
            nv += vol[i] * vec[i] * vec[i];
        }
        const double next = std::sqrt(nv / ny);
        const double nrm = std::sqrt(ny);
        for (std::size_t i = 0; i < n; ++i) vec[i] = y[i] / nrm;
        if (std::abs(next - est) <= 1e-10 * next) {
            est = next;
            break;
        }
        est = next;
    }
    return est;
}

/// Solves L φ = h on the profile grid. `mu` (bubble scale) is used only for near-kernel diagnostics.
inline LinearSolveResult solve_linear(const Profile& U, double lambda, const std::vector<double>& h,
                                      double mu = 1.0, double nu = 0.5, double pivot_floor = 1e-14) {
    const std::size_t n = U.size();
    if (h.size() != n) throw DomainError("solve_linear: h must live on the profile grid");
    const RadialFD fd(U.r);
    std::vector<double> pot(n);
    for (std::size_t i = 0; i < n; ++i) {
        pot[i] = lambda * std::exp(U.u[i]);
        if (!std::isfinite(pot[i])) throw OverflowError("solve_linear: e^U overflows", U.r[i]);
    }
    const Tridiag A = linear_operator_symmetric(fd, pot);
    const TridiagLU lu(A);
    const double piv_ratio = lu.max_pivot() > 0.0 ? lu.min_pivot() / lu.max_pivot() : 0.0;
    if (lu.singular() || piv_ratio < pivot_floor) {
        std::vector<double> vec;
        const double smin = smallest_mode(A, fd.vol, vec);
        const auto z = cutoff_kernel(U.r, lambda, mu);
        double dz = 0.0, zz = 0.0, vv = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dz += fd.vol[i] * z[i] * vec[i];
            zz += fd.vol[i] * z[i] * z[i];
            vv += fd.vol[i] * vec[i] * vec[i];
        }
        const double overlap = zz > 0.0 ? std::abs(dz) / std::sqrt(zz * vv) : 0.0;
        throw NearKernelError("solve_linear: discrete operator is numerically singular", smin, overlap);
    }
    std::vector<double> b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = fd.vol[i] * h[i];
    LinearSolveResult res;
    res.phi = lu.solve(b);
    res.min_pivot_ratio = piv_ratio;
    res.phi_sup = norm_sup(res.phi);
    const auto hn = mixed_norms(U.r, h, {nu, lambda});
    res.h_star = hn.star;
    res.h_starstar = hn.starstar;
    res.ratio_star = hn.star > 0.0 ? res.phi_sup / hn.star : 0.0;
    res.ratio_starstar = hn.starstar > 0.0 ? res.phi_sup / hn.starstar : 0.0;
    return res;
}

/// L_h φ on the grid (finite-volume Laplacian, lumped potential).
inline std::vector<double> apply_linear(const Profile& U, double lambda, const std::vector<double>& phi) {
    const RadialFD fd(U.r);
    auto y = fd.apply_neg_laplacian(phi);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += phi[i] - lambda * std::exp(U.u[i]) * phi[i];
    return y;
}

/// Deterministic uniform in [0,1) from a 64-bit engine (independent of the standard library's distributions).
inline double uniform01(std::mt19937_64& g) { return double(g() >> 11) * 0x1.0p-53; }

/// Smooth random right-hand side h(r) = Σ_{j=0}^{modes-1} c_j cos(jπr) with c_j uniform in [-1, 1]/(1+j)².
inline std::vector<double> random_smooth_field(const std::vector<double>& r, std::mt19937_64& g, int modes = 8) {
    std::vector<double> c(modes);
    for (int j = 0; j < modes; ++j) c[j] = (2.0 * uniform01(g) - 1.0) / double((1 + j) * (1 + j));
    std::vector<double> h(r.size(), 0.0);
    for (std::size_t i = 0; i < r.size(); ++i)
        for (int j = 0; j < modes; ++j) h[i] += c[j] * std::cos(j * std::numbers::pi * r[i]);
    return h;
}

struct ProbeResult {
    double lambda = 0.0;
    double sup_ratio_star = 0.0;
    double sup_ratio_starstar = 0.0;
    int samples = 0;
};

/// Applies solve_linear to `count` seeded random smooth right-hand sides and reports the sup ratios.
inline ProbeResult linear_probe(const Profile& U, double lambda, std::uint64_t seed, int count = 10, double mu = 1.0) {
    std::mt19937_64 g(seed);
    ProbeResult p;
    p.lambda = lambda;
    for (int k = 0; k < count; ++k) {
        const auto h = random_smooth_field(U.r, g);
        const auto s = solve_linear(U, lambda, h, mu);
        p.sup_ratio_star = std::max(p.sup_ratio_star, s.ratio_star);
        p.sup_ratio_starstar = std::max(p.sup_ratio_starstar, s.ratio_starstar);
        ++p.samples;
    }
    return p;
}

// ---------------------------------------------------------------------------------------------
// Contraction T(φ) = L^{-1}[N(φ) - R(U)] on A_ρ = {‖φ‖_∞ ≤ ρ ε^{1+σ}}.

struct FixedPointOptions {
    int max_iterations = 60;
    double increment_tol = 1e-13;
    double noise_floor = 1e-11;  ///< increments below this (relative to max(1, ‖φ‖)) are excluded from the factor
    double linear_tol = 1e-10;
    double contraction_max = 1.0;
};

struct FixedPointResult {
    std::vector<double> phi;
    std::vector<double> increments;  ///< ‖φ_{j+1} - φ_j‖_∞
    std::vector<double> norms;       ///< ‖φ_j‖_∞
    double factor = 0.0;             ///< worst ratio of successive increments above the noise floor
    double radius = 0.0;             ///< ρ ε^{1+σ}
    double phi1_sup = 0.0;           ///< ‖L^{-1}R(U)‖_∞
    double residual_before = 0.0;    ///< ‖R(U)‖_**
    double residual_after = 0.0;     ///< ‖R(U) + L_hφ - N(φ)‖_**
    int iterations = 0;
};

/// ρ from the design rule: ρ = rho_factor ‖L^{-1}R(U)‖_∞/ε^{1+σ}, so the ball radius is rho_factor ‖φ₁‖_∞.
inline FixedPointResult fixed_point(const Profile& U, double lambda, double eps, double sigma, double rho_factor = 4.0,
                                    const FixedPointOptions& opt = {}, double mu = 1.0) {
    const std::size_t n = U.size();
    const auto R = residual(U, lambda).R;
    std::vector<double> minusR(n);
    for (std::size_t i = 0; i < n; ++i) minusR[i] = -R[i];
    FixedPointResult out;
    out.residual_before = mixed_norms(U.r, R, {0.5, lambda}).starstar;
    std::vector<double> phi(n, 0.0);
    const auto first = solve_linear(U, lambda, minusR, mu);
    out.phi1_sup = first.phi_sup;
    const double rho = rho_factor * first.phi_sup / std::pow(eps, 1.0 + sigma);
    out.radius = rho * std::pow(eps, 1.0 + sigma);
    out.norms.push_back(0.0);
    double prev_inc = 0.0;
    for (int it = 0; it < opt.max_iterations; ++it) {
        if (norm_sup(phi) > 1.0) throw NonContractionError("fixed_point: iterate left the unit ball", INFINITY);
        const auto N = nonlinearity(U.u, phi, lambda);
        std::vector<double> rhs(n);
        for (std::size_t i = 0; i < n; ++i) rhs[i] = N[i] - R[i];
        auto next = solve_linear(U, lambda, rhs, mu).phi;
        double inc = 0.0;
        for (std::size_t i = 0; i < n; ++i) inc = std::max(inc, std::abs(next[i] - phi[i]));
        phi.swap(next);
        out.increments.push_back(inc);
        out.norms.push_back(norm_sup(phi));
        out.iterations = it + 1;
        const double floor = opt.noise_floor * std::max(1.0, out.norms.back());
        if (it >= 1 && prev_inc > floor && inc > floor) out.factor = std::max(out.factor, inc / prev_inc);
        if (out.norms.back() > out.radius)
            throw NonContractionError("fixed_point: iterate escaped the ball A_rho", out.factor);
        if (it >= 1 && out.factor >= opt.contraction_max)
            throw NonContractionError("fixed_point: contraction factor >= 1", out.factor);
        if (inc <= opt.increment_tol * std::max(1.0, out.norms.back())) break;
        prev_inc = inc;
    }
    const auto Lphi = apply_linear(U, lambda, phi);
    const auto N = nonlinearity(U.u, phi, lambda);
    std::vector<double> corr(n);
    for (std::size_t i = 0; i < n; ++i) corr[i] = R[i] + Lphi[i] - N[i];
    out.residual_after = mixed_norms(U.r, corr, {0.5, lambda}).starstar;
    out.phi = std::move(phi);
    return out;
}

}  // namespace kslayers
