#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "kslayers/ansatz.hpp"
#include "kslayers/bvp.hpp"

using namespace kslayers;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// J1 by its power series in long double (accurate well past x = 12).
long double j1_series(long double x) {
    long double term = x / 2, sum = term;
    for (int k = 1; k < 80; ++k) {
        term *= -(x * x / 4) / (k * (k + 1.0L));
        sum += term;
    }
    return sum;
}

double j1_zero_oracle(double lo, double hi) {
    long double a = lo, b = hi, fa = j1_series(a);
    for (int i = 0; i < 200; ++i) {
        const long double m = 0.5L * (a + b), fm = j1_series(m);
        if ((fm > 0) == (fa > 0)) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    return double(0.5L * (a + b));
}

std::vector<double> uniform_grid(std::size_t n) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = double(i) / double(n - 1);
    return r;
}

const double kEps = 0.025;

}  // namespace

TEST_CASE("radial Neumann eigenvalues", "[bvp]") {
    const auto ev = radial_eigenvalues(4);
    CHECK(ev[0] == 1.0);
    const double brackets[3][2] = {{3.5, 4.0}, {6.8, 7.2}, {10.0, 10.4}};
    for (int i = 0; i < 3; ++i) {
        const double j = j1_zero_oracle(brackets[i][0], brackets[i][1]);
        CHECK_THAT(ev[i + 1], WithinRel(1.0 + j * j, 1e-12));
    }
    CHECK_THAT(ev[1], WithinAbs(15.681970642124, 1e-9));
    CHECK_THAT(ev[2], WithinAbs(50.218456321695, 1e-9));
    CHECK_THAT(ev[3], WithinAbs(104.4994538951, 1e-8));
    for (std::size_t i = 1; i < ev.size(); ++i) CHECK(ev[i] > ev[i - 1]);
    CHECK_THROWS_AS(radial_eigenvalues(0), DomainError);
    CHECK_THROWS_AS(bessel_j1_zero(0), DomainError);
}

TEST_CASE("radial eigenfunctions satisfy the eigenproblem", "[bvp]") {
    const auto ev = radial_eigenvalues(3);
    for (int i = 2; i <= 3; ++i) {
        const double h = 1e-4;
        for (double r : {0.2, 0.5, 0.8}) {
            const auto f = radial_eigenfunction(i, {r - h, r, r + h});
            const double lap = (f[2] - 2 * f[1] + f[0]) / (h * h) + (f[2] - f[0]) / (2 * h) / r;
            CHECK_THAT(-lap + f[1], WithinAbs(ev[i - 1] * f[1], 1e-5 * ev[i - 1]));
        }
        const auto end = radial_eigenfunction(i, {1.0 - 1e-6, 1.0});
        CHECK(std::abs(end[1] - end[0]) / 1e-6 <= 1e-4);
        CHECK(radial_eigenfunction(i, {0.0})[0] == 1.0);
        auto shifted = radial_eigenfunction(i, uniform_grid(1001));
        for (double& x : shifted) x += 1.0;
        CHECK(zero_count(shifted, 0.0) == i - 1);
    }
}

TEST_CASE("constant solutions", "[bvp]") {
    const auto grid = uniform_grid(201);
    const RadialFD fd(grid);
    const auto b = newton_solve(fd, {Form::mu_form, 10.0}, std::vector<double>(grid.size(), 1.0));
    CHECK(b.newton_iters == 0);
    CHECK(b.residual_norm <= 1e-15);
    CHECK(b.zero_count == 0);

    // Smaller root of c = λe^c by fixed-point iteration.
    const double lambda = 0.1;
    double c = 0.0;
    for (int i = 0; i < 200; ++i) c = lambda * std::exp(c);
    const auto s = solve_bvp(lambda, constant_profile(grid, 0.3));
    for (double u : s.profile.u) CHECK_THAT(u, WithinAbs(c, 1e-12));
    CHECK(s.residual_norm <= 1e-12);
}

TEST_CASE("discrete Jacobian is volume-symmetric and matches finite differences", "[bvp]") {
    const auto grid = graded_grid(120, 1e-2, 0.05);
    const RadialFD fd(grid);
    std::vector<double> u(grid.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::cos(2.0 * grid[i]) + grid[i];
    const Source src{Form::keller_segel, std::log(0.2)};
    const auto J = detail::bvp_jacobian(fd, src, u);
    for (std::size_t i = 0; i + 1 < u.size(); ++i)
        CHECK_THAT(fd.vol[i] * J.sup[i], WithinRel(fd.vol[i + 1] * J.sub[i], 1e-12));
    const double h = 1e-6;
    for (std::size_t j : {std::size_t(0), std::size_t(5), std::size_t(60), u.size() - 1}) {
        auto up = u, um = u;
        up[j] += h;
        um[j] -= h;
        const auto Fp = detail::bvp_residual(fd, src, up), Fm = detail::bvp_residual(fd, src, um);
        for (std::size_t i = (j > 0 ? j - 1 : 0); i <= std::min(j + 1, u.size() - 1); ++i) {
            const double fdv = (Fp[i] - Fm[i]) / (2 * h);
            double an = i == j ? J.diag[i] : (i + 1 == j ? J.sup[i] : J.sub[j]);
            CHECK_THAT(an, WithinAbs(fdv, 1e-6 * std::max(1.0, std::abs(fdv))));
        }
    }
}

TEST_CASE("Newton from the ansatz converges", "[bvp]") {
    const double lambda = lambda_of_epsilon(kEps);
    const auto a = build_ansatz(lambda);
    const auto guess = a.ansatz.sample();
    const auto s = solve_bvp(lambda, guess);
    CHECK(s.residual_norm <= 1e-9);
    CHECK(s.newton_iters <= 10);
    CHECK(s.residual_history.front() > s.residual_history.back());
    CHECK(s.u0_value == s.profile.u.front());
    CHECK(s.u0_value > s.profile.u.back());
    // Concentration at the origin carries mass close to 8π.
    const auto ref = solve_layers(0, 4.0 * kEps / std::numbers::sqrt2, OuterMode::dirichlet_one);
    const auto rep = concentration_report(s, ref, kEps);
    CHECK_THAT(rep.origin_mass / (8.0 * std::numbers::pi), WithinAbs(1.0, 0.1));
    CHECK(rep.total_mass >= rep.origin_mass);
    CHECK(rep.boundary_mass > 0.0);
    CHECK(rep.boundary_inner_radius == 0.75);
    CHECK(rep.layer_fluxes.size() == 1);
    CHECK(rep.layer_fluxes[0] > 0.0);
    CHECK(rep.gap_samples > 0);
    CHECK(std::isfinite(rep.profile_gap));
    // Total mass equals ∫u over the disk for an exact solution (integrate the equation).
    CHECK_THAT(rep.total_mass, WithinRel(l1_disk(s.profile.r, s.profile.u, 0.0, 1.0, false), 2e-3));
}

TEST_CASE("central value converges at second order under grid refinement", "[bvp]") {
    const double lambda = lambda_of_epsilon(kEps);
    const auto a = build_ansatz(lambda);
    std::vector<double> u0;
    for (std::size_t n : {1001, 2001, 4001}) {
        const auto grid = bvp_grid(lambda, kEps, n);
        const auto s = solve_bvp(lambda, a.ansatz.sample(grid));
        u0.push_back(s.u0_value);
    }
    const double ratio = (u0[0] - u0[1]) / (u0[1] - u0[2]);
    INFO("u0 = " << u0[0] << ", " << u0[1] << ", " << u0[2]);
    CHECK(ratio > 3.0);
    CHECK(ratio < 5.0);
}

TEST_CASE("branches from the second and third radial eigenvalues", "[bvp]") {
    const auto grid = uniform_grid(2001);
    BranchOptions opt;
    std::vector<double> last_u0;
    for (int i : {2, 3}) {
        const auto seed = seed_branch(i, +1, grid, opt);
        const double mu0 = radial_eigenvalues(i).back();
        CHECK_THAT(seed[0].lambda, WithinAbs(mu0, 0.05 * mu0));
        const auto br = continue_branch(seed[0], seed[1], 15, opt);
        CHECK(br.points.size() == 15);
        for (const auto& p : br.points) {
            CHECK(p.zero_count == i - 1);
            CHECK(p.u0_value > 1.0);
            CHECK(p.residual_norm <= 1e-9);
        }
        last_u0.push_back(br.points.back().u0_value);
    }
    CHECK(last_u0[0] != last_u0[1]);
    const auto minus = seed_branch(2, -1, grid, opt);
    CHECK(minus[0].u0_value < 1.0);
    CHECK_THROWS_AS(seed_branch(1, 1, grid), DomainError);
    CHECK_THROWS_AS(seed_branch(2, 0, grid), DomainError);
}

TEST_CASE("bubble-and-layer family does not continue to large lambda", "[bvp]") {
    const double lambda = lambda_of_epsilon(kEps);
    const auto a = build_ansatz(lambda);
    const auto s = solve_bvp(lambda, a.ansatz.sample(bvp_grid(lambda, kEps, 2000)));
    CHECK_THROWS_AS(continue_in_lambda(s, lambda_of_epsilon(0.04), 2000), StallError);
}

TEST_CASE("zero count and input validation", "[bvp]") {
    CHECK(zero_count({2.0, 0.5, 1.5, 0.2}) == 3);
    CHECK(zero_count({2.0, 1.0, 2.0}) == 0);
    CHECK(zero_count({1.0, 1.0}) == 0);
    const auto grid = uniform_grid(11);
    CHECK_THROWS_AS(solve_bvp(-1.0, constant_profile(grid, 0.0)), DomainError);
    auto bad = constant_profile(grid, 0.0);
    bad.u[3] = NAN;
    CHECK_THROWS_AS(solve_bvp(0.1, bad), DomainError);
    CHECK_THROWS_AS(RadialFD({0.1, 0.5, 1.0}), DiscretizationError);
}
