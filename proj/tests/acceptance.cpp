#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "kslayers/analysis.hpp"
#include "kslayers/ansatz.hpp"
#include "kslayers/bvp.hpp"
#include "kslayers/greens.hpp"
#include "kslayers/nondegen.hpp"
#include "kslayers/specfun.hpp"

using namespace kslayers;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// One-layer reflection defect written directly from the Bessel basis.
double one_layer_defect(double a, double b, OuterMode mode) {
    const auto e = modified_bessel(a);
    const double c = (1.0 - b * e.K0) / e.I0;
    const double left = b * e.K0p + c * e.I0p;
    const auto one = modified_bessel(1.0);
    double right;
    if (mode == OuterMode::neumann) {
        const double m = -one.K0p / one.I0p;
        right = (e.K0p + m * e.I0p) / (e.K0 + m * e.I0);
    } else {
        const double det = e.K0 * one.I0 - e.I0 * one.K0;
        right = ((one.I0 - e.I0) * e.K0p + (e.K0 - one.K0) * e.I0p) / det;
    }
    return left + right;
}

double bisection_oracle(double b, OuterMode mode) {
    double lo = 1e-6, hi = 1.0 - 1e-6;
    const double slo = one_layer_defect(lo, b, mode);
    for (int i = 0; i < 200 && hi - lo > 1e-16; ++i) {
        const double mid = 0.5 * (lo + hi);
        ((one_layer_defect(mid, b, mode) > 0.0) == (slo > 0.0) ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// J1 by its power series in long double, bisected for the first positive zero.
double j1_first_zero() {
    auto j1 = [](long double x) {
        long double term = x / 2, sum = term;
        for (int k = 1; k < 80; ++k) {
            term *= -(x * x / 4) / (k * (k + 1.0L));
            sum += term;
        }
        return sum;
    };
    long double a = 3.5L, b = 4.0L;
    const bool pa = j1(a) > 0;
    for (int i = 0; i < 200; ++i) {
        const long double m = 0.5L * (a + b);
        ((j1(m) > 0) == pa ? a : b) = m;
    }
    return double(0.5L * (a + b));
}

const std::vector<double> kBGrid{1e-4, 1e-3, 1e-2};
const std::vector<OuterMode> kModes{OuterMode::dirichlet_one, OuterMode::neumann};

Outcome wronskian() {
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double r = std::pow(10.0, -8.0 + 8.0 * i / 999.0);
        const auto p = xi_zeta(std::min(r, 1.0));
        worst = std::max(worst, std::abs(p.r * (p.xip * p.zeta - p.xi * p.zetap) - 1.0));
    }
    const double zp1 = std::abs(xi_zeta(1.0).zetap);
    return {worst <= 1e-10 && zp1 <= 1e-12, "max |rW - 1| = " + fmt("%.2e", worst) + ", |zeta'(1)| = " + fmt("%.2e", zp1)};
}

Outcome epsilon_round_trip() {
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const double e = 0.02 + 0.18 * i / 19.0;
        worst = std::max(worst, std::abs(solve_epsilon(lambda_of_epsilon(e)) - e) / e);
    }
    return {worst <= 1e-10, "max relative error " + fmt("%.2e", worst)};
}

Outcome reflection_laws() {
    double worst = 0.0, oracle_gap = 0.0;
    for (auto mode : kModes)
        for (double b : kBGrid)
            for (int k = 1; k <= 3; ++k) {
                const auto sol = solve_layers(k, b, mode);
                for (double d : reflection_residual(sol.config)) worst = std::max(worst, std::abs(d));
                if (k == 1) oracle_gap = std::max(oracle_gap, std::abs(sol.config.alphas[0] - bisection_oracle(b, mode)));
            }
    return {worst <= 1e-10 && oracle_gap <= 1e-9,
            "max defect " + fmt("%.2e", worst) + ", k = 1 gap to bisection " + fmt("%.2e", oracle_gap)};
}

Outcome nondegeneracy() {
    double min_mk = INFINITY, fd_rel = 0.0, det_rel = 0.0, literal = 0.0;
    for (auto mode : kModes)
        for (double b : kBGrid)
            for (int k = 1; k <= 6; ++k) {
                LayerSolveOptions o;
                o.k_max = std::max(o.k_max, k);
                const auto sol = solve_layers(k, b, mode, o);
                const auto nm = assemble_Ak(sol.config.alphas, b, mode, INFINITY);
                min_mk = std::min(min_mk, std::abs(det_Mk(nm)));
                fd_rel = std::max(fd_rel, nm.fd_max_rel);
            }
    // N_k has k layer radii: k - 1 free layers and the boundary.
    for (double b : kBGrid)
        for (int k = 1; k <= 4; ++k) {
            const auto sol = solve_layers(k - 1, b, OuterMode::dirichlet_one);
            const std::size_t m = layer_count(sol.config.alphas, OuterMode::dirichlet_one);
            const LayerConstants c{std::vector<double>(m, 1.0), std::vector<double>(m, 0.5)};
            const auto p = solve_layer_parameters(sol.config.alphas, b, 0.0, OuterMode::dirichlet_one, c);
            const double reduced = p.detN / (LayerParameters::expected_sign(m) * p.flux_product);
            det_rel = std::max(det_rel, std::abs(reduced - p.Mk) / std::abs(p.Mk));
            literal = std::max(literal, std::abs(p.detN / p.Mk));
        }
    return {min_mk > 1e-8 && fd_rel <= 1e-5 && det_rel <= 1e-6,
            "min |M_k| = " + fmt("%.3e", min_mk) + ", A_k vs FD " + fmt("%.2e", fd_rel) +
                ", det N_k vs M_{k-1} (flux-normalized) " + fmt("%.2e", det_rel) + ", max literal |det N/M| " +
                fmt("%.3e", literal)};
}

Outcome correction_constants_check() {
    double worst = 0.0;
    const double g = modified_bessel(1.0).I0 / modified_bessel(1.0).I0p;
    for (double e : {0.05, 0.1}) {
        const auto c = correction_constants({1.0, e * g, e, lambda_of_epsilon(e)});
        worst = std::max(worst, std::abs(c.nu1 - c.nu1_closed) / std::abs(c.nu1_closed));
    }
    return {worst <= 1e-6, "max relative gap " + fmt("%.2e", worst)};
}

Outcome residual_scaling() {
    std::vector<double> eps, l1;
    bool middle_ok = true;
    for (double e : {0.10, 0.07, 0.05, 0.035, 0.025}) {
        const double lambda = lambda_of_epsilon(e);
        const auto a = build_ansatz(lambda);
        const Regions rg{a.params.delta, a.params.delta1};
        const auto rep = residual(a.ansatz.sample(), lambda, &rg).report;
        eps.push_back(e);
        l1.push_back(rep.l1_annulus);
        middle_ok = middle_ok && rep.sup_middle <= e * e;
    }
    const double slope = loglog_slope(eps, l1);
    return {slope >= 1.05 && middle_ok, "slope " + fmt("%.3f", slope) + (middle_ok ? "" : ", middle sup above eps^2")};
}

Outcome matching_estimates() {
    std::vector<double> lams, d0, d1, ratio;
    for (double lambda : {1e-3, 3e-4, 1e-4}) {
        const auto s = build_ansatz(lambda);
        const auto& a = s.ansatz;
        std::vector<double> r;
        for (int i = 0; i <= 200; ++i) r.push_back(a.delta * (1.0 + i / 200.0));
        const auto u0 = a.inner.eval_u0(r);
        double m0 = 0.0, m1 = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) {
            const auto u2 = a.eval_u2(r[i]);
            m0 = std::max(m0, std::abs(u0[i].u - u2.u));
            m1 = std::max(m1, std::abs(u0[i].d1 - u2.d1));
        }
        std::vector<double> rb;
        for (int i = 1; i < 200; ++i) rb.push_back(1.0 - 2.0 * a.delta1 + a.delta1 * i / 200.0);
        const auto u4 = a.eval_layer(0, -1, rb);
        double worst = 0.0;
        for (std::size_t i = 0; i < rb.size(); ++i) {
            const double t = 1.0 - rb[i], e = a.eps;
            const double env = e * e + e * t * t + t * t * t + t * t * t * t / e + std::exp(-t / e);
            worst = std::max(worst, std::abs(u4[i].u - a.eval_u2(rb[i]).u) / env);
        }
        lams.push_back(lambda);
        d0.push_back(m0);
        d1.push_back(m1);
        ratio.push_back(worst);
    }
    const double a0 = loglog_slope(lams, d0), a1 = loglog_slope(lams, d1);
    const double C = ratio.front();
    const bool env_ok = std::all_of(ratio.begin(), ratio.end(), [&](double x) { return x <= C; });
    return {a0 >= 0.3 && a1 >= 0.3 && env_ok,
            "rates " + fmt("%.3f", a0) + ", " + fmt("%.3f", a1) + ", envelope constant " + fmt("%.3e", C)};
}

Outcome linear_probe_check() {
    double lo = INFINITY, hi = 0.0;
    for (double lambda : {1e-2, 1e-3, 1e-4, 1e-5}) {
        const auto a = build_ansatz(lambda);
        const auto p = linear_probe(a.ansatz.sample(), lambda, 12345, 10, a.params.mu);
        lo = std::min(lo, p.sup_ratio_star);
        hi = std::max(hi, p.sup_ratio_star);
    }
    return {hi / lo < 5.0, "spread " + fmt("%.3f", hi / lo)};
}

Outcome fixed_point_check() {
    const double lambda = 1e-4;
    const auto a = build_ansatz(lambda);
    const auto fp = fixed_point(a.ansatz.sample(), lambda, a.params.eps, 0.1, 4.0, {}, a.params.mu);
    const double nmax = *std::max_element(fp.norms.begin(), fp.norms.end());
    const bool ok = fp.factor <= 0.5 && nmax <= fp.radius && fp.residual_after * 1e2 <= fp.residual_before;
    return {ok, "factor " + fmt("%.3f", fp.factor) + ", max |phi| / radius " + fmt("%.3f", nmax / fp.radius) +
                    ", residual drop " + fmt("%.3e", fp.residual_before / fp.residual_after)};
}

Outcome direct_solve() {
    std::vector<ConcentrationReport> reps;
    int iters = 0;
    for (double lambda : {1e-3, 1e-4}) {
        const auto a = build_ansatz(lambda);
        const auto s = solve_bvp(lambda, a.ansatz.sample());
        iters = std::max(iters, s.newton_iters);
        LayerSolveOptions lo;
        lo.b_max = 0.5;
        const double eps = a.params.eps;
        reps.push_back(concentration_report(s, solve_layers(0, 4.0 * eps / std::numbers::sqrt2, OuterMode::dirichlet_one, lo), eps));
    }
    const double target = 8.0 * std::numbers::pi;
    const double g3 = std::abs(reps[0].origin_mass - target), g4 = std::abs(reps[1].origin_mass - target);
    const bool ok = iters <= 10 && g4 <= 0.1 * target && g4 < g3 && reps[1].total_mass > reps[0].total_mass &&
                    reps[1].profile_gap < reps[0].profile_gap;
    return {ok, "newton iterations " + std::to_string(iters) + ", origin mass at 1e-4 " + fmt("%.4f", reps[1].origin_mass)};
}

Outcome bifurcation() {
    const double j = j1_first_zero();
    const double ev = radial_eigenvalues(2).back();
    const double gap = std::abs(ev - (1.0 + j * j));
    std::vector<double> grid(2001);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = double(i) / double(grid.size() - 1);
    BranchOptions opt;
    const auto seed = seed_branch(2, +1, grid, opt);
    const auto br = continue_branch(seed[0], seed[1], 10, opt);
    bool ok = gap <= 1e-8;
    for (const auto& p : seed) ok = ok && p.zero_count == 1 && p.u0_value > 1.0;
    for (const auto& p : br.points) ok = ok && p.zero_count == 1 && p.u0_value > 1.0;
    return {ok, "lambda_2 gap " + fmt("%.2e", gap) + ", " + std::to_string(seed.size() + br.points.size()) +
                    " branch points checked"};
}

Outcome kernel_mode_check() {
    double worst = 0.0;
    for (double lambda : {1e-2, 1e-3, 1e-4}) {
        const double mu = 1.0, s = mu * std::sqrt(lambda);
        auto z = [&](double r) { return kernel_mode(std::abs(r), lambda, mu); };
        for (int i = 0; i <= 2000; ++i) {
            const double r = i / 2000.0;
            const double h = 4e-3 * std::max(s, r);
            // Sixth-order central differences.
            double f[7];
            for (int k = 0; k < 7; ++k) f[k] = z(r + (k - 3) * h);
            const double z0 = f[3];
            const double d2 = (2 * (f[0] + f[6]) - 27 * (f[1] + f[5]) + 270 * (f[2] + f[4]) - 490 * z0) / (180 * h * h);
            const double d1 = (-f[0] + 9 * f[1] - 45 * f[2] + 45 * f[4] - 9 * f[5] + f[6]) / (60 * h);
            const double lap = r > 0.0 ? d2 + d1 / r : 2.0 * d2;
            worst = std::max(worst, std::abs(-lap - kernel_potential(r, lambda, mu) * z0));
        }
    }
    return {worst <= 1e-6, "max FD residual " + fmt("%.2e", worst)};
}

const std::vector<Criterion> kCriteria{
    {1, "Wronskian identity", 1.0, wronskian},
    {2, "parameter relation round trip", 1.0, epsilon_round_trip},
    {3, "reflection laws", 10.0, reflection_laws},
    {4, "nondegeneracy sweep", 30.0, nondegeneracy},
    {5, "correction constants", 5.0, correction_constants_check},
    {6, "residual scaling", 60.0, residual_scaling},
    {7, "matching estimates", 60.0, matching_estimates},
    {8, "linear probe", 120.0, linear_probe_check},
    {9, "fixed point", 120.0, fixed_point_check},
    {10, "direct solve and concentration", 180.0, direct_solve},
    {11, "bifurcation structure", 120.0, bifurcation},
    {12, "kernel mode", 1.0, kernel_mode_check},
};

bool run_one(const Criterion& c) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = c.run();
    } catch (const std::exception& e) {
        o = {false, std::string("error: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = dt < c.budget_s;
    const bool pass = o.pass && in_time;
    std::printf("criterion %d: %s  %s (%s; %.2f s of %.0f s%s)\n", c.id, pass ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), dt, c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
    return pass;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria for kslayers"};
    int which = 0;
    app.add_option("--criterion", which, "Run a single criterion (1-12); all when omitted")->check(CLI::Range(1, 12));
    CLI11_PARSE(app, argc, argv);
    int failed = 0;
    for (const auto& c : kCriteria)
        if (which == 0 || which == c.id) failed += run_one(c) ? 0 : 1;
    if (which == 0) std::printf("%d of %zu criteria passed\n", int(kCriteria.size()) - failed, kCriteria.size());
    return failed == 0 ? 0 : 1;
}
