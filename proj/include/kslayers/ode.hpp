#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "errors.hpp"

namespace kslayers {

struct OdeOptions {
    double rtol = 1e-10;
    double atol = 1e-10;
    double h_initial = 0.0;  ///< 0 selects a step from the output spacing
    double h_max = INFINITY;
    long max_steps = 2000000;
};

struct OdeStats {
    long accepted = 0;
    long rejected = 0;
};

/// Dormand–Prince 5(4) integration of y' = f(t, y) from t0, reporting the state at each
/// point of `outputs` (monotone in the direction of integration). Steps land exactly on outputs.
template <class F>
std::vector<std::vector<double>> integrate_dp45(F&& f, double t0, std::vector<double> y0,
                                                const std::vector<double>& outputs,
                                                const OdeOptions& opt = {}, OdeStats* stats = nullptr) {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                            a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                            b6 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                            e6 = 22.0 / 525, e7 = -1.0 / 40;

    const std::size_t n = y0.size();
    std::vector<std::vector<double>> result;
    result.reserve(outputs.size());
    if (outputs.empty()) return result;
    const double dir = (outputs.back() >= t0) ? 1.0 : -1.0;

    std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), yt(n), y5(n);
    double t = t0;
    std::vector<double> y = std::move(y0);
    f(t, y, k1);

    double h = opt.h_initial;
    if (h <= 0.0) {
        const double span = std::abs(outputs.back() - t0);
        h = std::max(span * 1e-3, 1e-12);
    }
    h = std::min(h, opt.h_max);
    long steps = 0;

    for (double target : outputs) {
        while ((target - t) * dir > 0.0) {
            if (++steps > opt.max_steps)
                throw ConvergenceError("integrate_dp45: step budget exhausted", std::abs(target - t),
                                       static_cast<int>(steps));
            double hh = std::min(h, std::abs(target - t));
            const bool hits = hh >= std::abs(target - t) * (1.0 - 1e-14);
            const double sh = dir * hh;

            for (std::size_t i = 0; i < n; ++i) yt[i] = y[i] + sh * a21 * k1[i];
            f(t + c2 * sh, yt, k2);
            for (std::size_t i = 0; i < n; ++i) yt[i] = y[i] + sh * (a31 * k1[i] + a32 * k2[i]);
            f(t + c3 * sh, yt, k3);
            for (std::size_t i = 0; i < n; ++i) yt[i] = y[i] + sh * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
            f(t + c4 * sh, yt, k4);
            for (std::size_t i = 0; i < n; ++i)
                yt[i] = y[i] + sh * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
            f(t + c5 * sh, yt, k5);
            for (std::size_t i = 0; i < n; ++i)
                yt[i] = y[i] + sh * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
            const double tnew = hits ? target : t + sh;
            f(t + sh, yt, k6);
            for (std::size_t i = 0; i < n; ++i)
                y5[i] = y[i] + sh * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
            f(tnew, y5, k7);

            double err = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double ei =
                    sh * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
                const double sc = opt.atol + opt.rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
                err = std::max(err, std::abs(ei) / sc);
            }
            if (!std::isfinite(err)) err = 1e10;

            if (err <= 1.0) {
                t = tnew;
                y.swap(y5);
                k1.swap(k7);
                if (stats) ++stats->accepted;
                const double fac = (err == 0.0) ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
                if (!hits || fac < 1.0) h = std::min(hh * fac, opt.h_max);
            } else {
                if (stats) ++stats->rejected;
                h = hh * std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.9);
                if (h < 1e-15 * std::max(1.0, std::abs(t)))
                    throw ConvergenceError("integrate_dp45: step size underflow", err, static_cast<int>(steps));
            }
        }
        result.push_back(y);
    }
    return result;
}

}  // namespace kslayers
