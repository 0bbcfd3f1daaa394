#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "kslayers/nondegen.hpp"

using namespace kslayers;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const std::vector<double> kBGrid{1e-4, 1e-3, 1e-2};
const std::vector<OuterMode> kModes{OuterMode::dirichlet_one, OuterMode::neumann};

// Jacobian of the layer defects by central differences of reflection_residual.
DenseMatrix defect_fd(const LayerConfig& c, double h) {
    const std::size_t k = c.alphas.size();
    DenseMatrix J(k);
    for (std::size_t j = 0; j < k; ++j) {
        auto p = c, m = c;
        p.alphas[j] += h;
        m.alphas[j] -= h;
        const auto fp = reflection_residual(p), fm = reflection_residual(m);
        for (std::size_t i = 0; i < k; ++i) J(i, j) = (fp[i] - fm[i]) / (2 * h);
    }
    return J;
}

PerturbedGreenSpec zero_spec(const std::vector<double>& alphas, double b, OuterMode mode) {
    const std::size_t m = layer_count(alphas, mode);
    return {alphas, std::vector<double>(m, 0.0), std::vector<double>(m, 0.0), b, 0.0, mode};
}

}  // namespace

TEST_CASE("perturbed Green's function reduces to the unperturbed one", "[nondegen]") {
    for (auto mode : kModes) {
        const auto sol = solve_layers(2, 1e-3, mode);
        const auto g0 = sol.green;
        const auto g = perturbed_green(zero_spec(sol.config.alphas, 1e-3, mode));
        for (int j = 1; j < 100; ++j) {
            const double r = j / 100.0;
            CHECK_THAT(g.value(r), WithinAbs(g0.value(r), 1e-14));
        }
    }
}

TEST_CASE("perturbed interface values and shifts", "[nondegen]") {
    const std::vector<double> al{0.3, 0.6};
    auto s = zero_spec(al, 1e-3, OuterMode::dirichlet_one);
    s.eps = 1e-3;
    s.a = {1e-3, -2e-3, 0.5e-3};
    s.sigma = {0.01, -0.02, 0.0};
    const auto g = perturbed_green(s);
    CHECK_THAT(g.layers[0], WithinAbs(0.31, 1e-15));
    CHECK_THAT(g.layers[1], WithinAbs(0.58, 1e-15));
    CHECK_THAT(g.value(0.31), WithinAbs(1.0 + 1e-6, 1e-13));
    CHECK_THAT(g.value(0.58), WithinAbs(1.0 - 2e-6, 1e-13));
    CHECK_THAT(g.value(1.0), WithinAbs(1.0 + 0.5e-6, 1e-13));

    auto bad = s;
    bad.sigma[0] = 0.3 / 4.0;
    CHECK_THROWS_AS(perturbed_green(bad), DomainError);
    bad = s;
    bad.sigma[2] = 1e-3;
    CHECK_THROWS_AS(perturbed_green(bad), DomainError);
    bad = s;
    bad.a.pop_back();
    CHECK_THROWS_AS(perturbed_green(bad), DomainError);
    bad = s;
    bad.eps = -1.0;
    CHECK_THROWS_AS(perturbed_green(bad), DomainError);
}

TEST_CASE("analytic A_k matches finite differences of the defects", "[nondegen]") {
    for (auto mode : kModes) {
        for (double b : kBGrid) {
            for (int k = 1; k <= 4; ++k) {
                const auto sol = solve_layers(k, b, mode);
                const auto nm = assemble_Ak(sol.config.alphas, b, mode);
                CHECK(nm.fd_max_rel <= 1e-5);
                const auto fd = defect_fd(sol.config, 1e-6);
                const auto dense = to_dense(nm.entries);
                INFO("k = " << k << " b = " << b << " mode = " << to_string(mode));
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j)
                        CHECK_THAT(dense(i, j), WithinAbs(fd(i, j), 1e-5 * std::max(1.0, std::abs(fd(i, j)))));
            }
        }
    }
}

TEST_CASE("A_k is tridiagonal", "[nondegen]") {
    for (auto mode : kModes) {
        const auto sol = solve_layers(4, 1e-3, mode);
        const auto fd = fd_Ak(sol.config.alphas, 1e-3, mode);
        double scale = 0.0;
        for (double v : fd.a) scale = std::max(scale, std::abs(v));
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                if (std::abs(i - j) > 1) CHECK(std::abs(fd(i, j)) <= 1e-8 * scale);
    }
}

TEST_CASE("determinant recurrence agrees with cofactor expansion", "[nondegen]") {
    Catch::SimplePcg32 rng(7);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int n = 1; n <= 6; ++n) {
        for (int trial = 0; trial < 20; ++trial) {
            Tridiag t(n);
            for (int i = 0; i < n; ++i) {
                t.diag[i] = u(rng);
                if (i + 1 < n) {
                    t.sup[i] = u(rng);
                    t.sub[i] = u(rng);
                }
            }
            const double d = tridiag_det(t);
            CHECK_THAT(d, WithinAbs(cofactor_det(to_dense(t)), 1e-12 * std::max(1.0, std::abs(d))));
            // Homogeneity: det(sA) = s^n det(A).
            const double s = 1.7;
            Tridiag ts = t;
            for (auto* v : {&ts.diag, &ts.sup, &ts.sub})
                for (double& x : *v) x *= s;
            CHECK_THAT(tridiag_det(ts), WithinAbs(std::pow(s, n) * d, 1e-11 * std::max(1.0, std::abs(std::pow(s, n) * d))));
        }
    }
}

TEST_CASE("M_k stays away from zero", "[nondegen]") {
    for (auto mode : kModes) {
        const auto rows = mk_sweep(4, kBGrid, mode);
        CHECK(rows.size() == 12);
        for (const auto& r : rows) {
            INFO("k = " << r.k << " b = " << r.b << " mode = " << to_string(mode));
            CHECK(std::abs(r.Mk) > 1e-8);
            CHECK(std::isfinite(r.cond));
        }
    }
    const auto a1 = assemble_Ak(solve_layers(1, 1e-3, OuterMode::neumann).config.alphas, 1e-3, OuterMode::neumann);
    CHECK(a1.entries.diag[0] > 0.0);
}

TEST_CASE("parameter Jacobian determinant factors through M_k", "[nondegen]") {
    for (auto mode : kModes) {
        for (int k = 1; k <= 3; ++k) {
            const auto sol = solve_layers(k, 1e-3, mode);
            const std::size_t m = layer_count(sol.config.alphas, mode);
            LayerConstants c{std::vector<double>(m, 1.0), std::vector<double>(m, 0.5)};
            const auto p = solve_layer_parameters(sol.config.alphas, 1e-3, 0.0, mode, c);
            const double predicted = LayerParameters::expected_sign(m) * p.flux_product * p.Mk;
            INFO("k = " << k << " mode = " << to_string(mode));
            CHECK_THAT(p.detN, WithinRel(predicted, 1e-6));
            CHECK_THAT(p.Mk, WithinRel(tridiag_det(defect_jacobian(sol.green)), 1e-14));
        }
    }
}

TEST_CASE("layer parameters at the base point", "[nondegen]") {
    for (auto mode : kModes) {
        const auto sol = solve_layers(2, 1e-3, mode);
        const std::size_t m = layer_count(sol.config.alphas, mode);
        LayerConstants c{std::vector<double>(m, 1.0), std::vector<double>(m, 0.5)};
        const auto p0 = solve_layer_parameters(sol.config.alphas, 1e-3, 0.0, mode, c);
        CHECK(p0.residual <= 1e-10);
        for (std::size_t i = 0; i < m; ++i) {
            CHECK_THAT(p0.gamma[i], WithinAbs(p0.gamma0[i], 1e-9));
            CHECK(p0.gamma0[i] < 0.0);
            CHECK_THAT(p0.gamma0[i], WithinRel(-1.0 / sol.green.left_deriv(i), 1e-14));
            CHECK(std::abs(p0.sigma[i]) <= 1e-9);
        }
        // Departure from the base point is first order in eps.
        const auto p1 = solve_layer_parameters(sol.config.alphas, 1e-3, 1e-5, mode, c);
        const auto p2 = solve_layer_parameters(sol.config.alphas, 1e-3, 1e-4, mode, c);
        CHECK(p1.residual <= 1e-10);
        CHECK(p2.residual <= 1e-10);
        for (std::size_t i = 0; i < m; ++i) {
            const double r = (p2.gamma[i] - p2.gamma0[i]) / (p1.gamma[i] - p1.gamma0[i]);
            CHECK(r > 7.0);
            CHECK(r < 13.0);
            if (p1.sigma[i] != 0.0) {
                CHECK(p2.sigma[i] / p1.sigma[i] > 9.0);
                CHECK(p2.sigma[i] / p1.sigma[i] < 11.0);
            }
        }
        if (mode == OuterMode::dirichlet_one) CHECK(p1.sigma.back() == 0.0);
    }
}

TEST_CASE("layer parameters reject bad input", "[nondegen]") {
    const auto sol = solve_layers(1, 1e-3, OuterMode::neumann);
    LayerConstants c{{1.0}, {0.5}};
    CHECK_THROWS_AS(solve_layer_parameters(sol.config.alphas, 1e-3, 0.5, OuterMode::neumann, c), DomainError);
    CHECK_THROWS_AS(solve_layer_parameters(sol.config.alphas, 1e-3, -1e-3, OuterMode::neumann, c), DomainError);
    LayerConstants wrong{{1.0, 2.0}, {0.5}};
    CHECK_THROWS_AS(solve_layer_parameters(sol.config.alphas, 1e-3, 0.0, OuterMode::neumann, wrong), DomainError);
    LayerParameterOptions strict;
    strict.det_threshold = 1e9;
    CHECK_THROWS_AS(solve_layer_parameters(sol.config.alphas, 1e-3, 0.0, OuterMode::neumann, c, strict),
                    NondegeneracyError);
}
