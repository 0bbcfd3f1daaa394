#pragma once

#include <cmath>
#include <numbers>

#include "errors.hpp"

namespace kslayers {

/// Euler–Mascheroni constant.
inline constexpr double kEulerGamma = 0.57721566490153286061;

/// Largest radius accepted by modified_bessel.
inline constexpr double kBesselRmax = 10.0;

struct BesselEval {
    double r;
    double I0, I0p;
    double K0, K0p;
};

struct BesselPair {
    double r;
    double xi, xip;
    double zeta, zetap;
    double c_mix;
};

namespace detail {

// I0, I1 by their power series; all terms positive so the sum is accurate.
inline void bessel_i_series(double x, double& i0, double& i1) {
    const double q = 0.25 * x * x;
    double t0 = 1.0, t1 = 1.0;
    double s0 = 1.0, s1 = 1.0;
    for (int k = 1; k < 200; ++k) {
        t0 *= q / (double(k) * k);
        t1 *= q / (double(k) * (k + 1));
        s0 += t0;
        s1 += t1;
        if (t0 < 1e-17 * s0 && t1 < 1e-17 * s1) break;
    }
    i0 = s0;
    i1 = 0.5 * x * s1;
}

// K0, K1 by the logarithmic series, x <= 2.
inline void bessel_k_series(double x, double i0, double i1, double& k0, double& k1) {
    const double q = 0.25 * x * x;
    const double lg = std::log(0.5 * x);
    double t0 = 1.0;       // q^k/(k!)^2
    double t1 = 1.0;       // q^k/(k!(k+1)!)
    double hk = 0.0;       // harmonic number H_k
    double s0 = 0.0;
    double s1 = (-kEulerGamma) + (1.0 - kEulerGamma);  // psi(1) + psi(2)
    for (int k = 1; k < 200; ++k) {
        t0 *= q / (double(k) * k);
        t1 *= q / (double(k) * (k + 1));
        hk += 1.0 / k;
        const double a0 = t0 * hk;
        const double a1 = t1 * (2.0 * (hk - kEulerGamma) + 1.0 / (k + 1));
        s0 += a0;
        s1 += a1;
        if (std::abs(a0) < 1e-18 && std::abs(a1) < 1e-18) break;
    }
    k0 = -(lg + kEulerGamma) * i0 + s0;
    k1 = 1.0 / x + lg * i1 - 0.25 * x * s1;
}

// Steed's continued fraction (Temme's CF2) for K0, K1, x > 2.
inline void bessel_k_cf2(double x, double& k0, double& k1) {
    double b = 2.0 * (1.0 + x);
    double d = 1.0 / b;
    double h = d, delh = d;
    double q1 = 0.0, q2 = 1.0;
    const double a1 = 0.25;
    double q = a1, c = a1, a = -a1;
    double s = 1.0 + q * delh;
    for (int i = 1; i < 10000; ++i) {
        a -= 2.0 * i;
        c = -a * c / (i + 1.0);
        const double qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        const double dels = q * delh;
        s += dels;
        if (std::abs(dels / s) < 1e-17) break;
    }
    h = a1 * h;
    k0 = std::sqrt(std::numbers::pi / (2.0 * x)) * std::exp(-x) / s;
    k1 = k0 * (x + 0.5 - h) / x;
}

}  // namespace detail

/// I0, K0 and their first derivatives at r in (0, kBesselRmax].
inline BesselEval modified_bessel(double r) {
    if (!std::isfinite(r) || r <= 0.0 || r > kBesselRmax)
        throw DomainError("modified_bessel: radius must lie in (0, 10]");
    double i0, i1, k0, k1;
    detail::bessel_i_series(r, i0, i1);
    if (r <= 2.0)
        detail::bessel_k_series(r, i0, i1, k0, k1);
    else
        detail::bessel_k_cf2(r, k0, k1);
    return {r, i0, i1, k0, -k1};
}

/// Mixing coefficient making zeta = K0 + c I0 satisfy zeta'(1) = 0.
inline double zeta_mix() {
    static const double c = [] {
        const BesselEval e = modified_bessel(1.0);
        return -e.K0p / e.I0p;
    }();
    return c;
}

/// xi = I0 and zeta = K0 + c_mix I0 on (0, 1].
inline BesselPair xi_zeta(double r) {
    if (!std::isfinite(r) || r <= 0.0 || r > 1.0)
        throw DomainError("xi_zeta: radius must lie in (0, 1]");
    const BesselEval e = modified_bessel(r);
    const double c = zeta_mix();
    return {r, e.I0, e.I0p, e.K0 + c * e.I0, e.K0p + c * e.I0p, c};
}

/// Ordinary Bessel J0 and J1 for x >= 0.
inline void bessel_j01(double x, double& j0, double& j1) {
    if (!std::isfinite(x) || x < 0.0) throw DomainError("bessel_j01: argument must be >= 0");
    if (x <= 12.0) {
        const double q = -0.25 * x * x;
        double t0 = 1.0, t1 = 1.0, s0 = 1.0, s1 = 1.0;
        for (int k = 1; k < 200; ++k) {
            t0 *= q / (double(k) * k);
            t1 *= q / (double(k) * (k + 1));
            s0 += t0;
            s1 += t1;
            if (std::abs(t0) < 1e-18 && std::abs(t1) < 1e-18) break;
        }
        j0 = s0;
        j1 = 0.5 * x * s1;
        return;
    }
    // Hankel expansion.
    auto pq = [x](double nu, double& p, double& q) {
        const double m = 4.0 * nu * nu;
        const double z = 8.0 * x;
        p = 1.0;
        q = 0.0;
        double term = 1.0;
        double prev = 1e300;
        for (int k = 1; k < 40; ++k) {
            term *= (m - (2.0 * k - 1) * (2.0 * k - 1)) / (k * z);
            if (std::abs(term) > prev) break;
            prev = std::abs(term);
            if (k % 2 == 1) {
                q += ((k / 2) % 2 == 0 ? 1.0 : -1.0) * term;
            } else {
                p += ((k / 2) % 2 == 1 ? -1.0 : 1.0) * term;
            }
        }
    };
    double p0, q0, p1, q1;
    pq(0.0, p0, q0);
    pq(1.0, p1, q1);
    const double f = std::sqrt(2.0 / (std::numbers::pi * x));
    const double c0 = x - 0.25 * std::numbers::pi;
    const double c1 = x - 0.75 * std::numbers::pi;
    j0 = f * (p0 * std::cos(c0) - q0 * std::sin(c0));
    j1 = f * (p1 * std::cos(c1) - q1 * std::sin(c1));
}

}  // namespace kslayers
