#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kslayers.hpp"

using json = nlohmann::json;
using namespace kslayers;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitSolver = 3;

std::size_t worker_count(std::size_t jobs) {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("KSLAYERS_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) throw DomainError("KSLAYERS_THREADS must be a positive integer");
        n = std::size_t(v);
    }
    return std::min(n, std::max<std::size_t>(jobs, 1));
}

/// Bounded worker pool over [0, jobs); results are written by index, so output order is fixed.
/// The exception of the lowest failing index is rethrown.
template <class F>
void parallel_for(std::size_t jobs, F&& body) {
    std::vector<std::exception_ptr> errors(jobs);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < jobs; i = next++) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n = worker_count(jobs);
    for (std::size_t t = 1; t < n; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Replaces `--config FILE` by the file's key=value pairs, appended as flags unless given explicitly.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    std::optional<std::string> path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + i, args.begin() + i + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + i);
            break;
        }
    }
    if (!path) return args;
    std::ifstream in(*path);
    if (!in) throw DomainError("cannot open config file " + *path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DomainError("config line " + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        std::replace(key.begin(), key.end(), '_', '-');
        const std::string flag = "--" + key;
        const bool given = std::any_of(args.begin() + 1, args.end(), [&](const std::string& a) {
            return a == flag || a.rfind(flag + "=", 0) == 0;
        });
        if (!given) args.push_back(flag + "=" + value);
    }
    return args;
}

/// Every option of the active subcommand with its effective value.
std::vector<std::pair<std::string, std::string>> config_echo(const CLI::App& sub) {
    std::vector<std::pair<std::string, std::string>> out{{"subcommand", sub.get_name()}};
    for (const CLI::Option* o : sub.get_options()) {
        const std::string name = o->get_single_name();
        if (name == "help" || name.empty()) continue;
        std::string v;
        if (o->count()) {
            const auto& res = o->results();
            for (std::size_t i = 0; i < res.size(); ++i) v += (i ? "," : "") + res[i];
        } else {
            v = o->get_default_str();
        }
        out.emplace_back(name, v);
    }
    return out;
}

struct Output {
    std::string dir;
    std::string format = "json";
    std::vector<std::pair<std::string, std::string>> echo;

    json stamp(json j) const {
        json cfg = json::object();
        for (const auto& [k, v] : echo) cfg[k] = v;
        j["version"] = kVersion;
        j["config"] = cfg;
        return j;
    }

    void emit(const std::string& name, const json& j, const CsvTable* csv = nullptr) const {
        const json full = stamp(j);
        const std::string header = comment_header(echo);
        if (!dir.empty()) {
            atomic_write(std::filesystem::path(dir) / (name + ".json"), full.dump(2) + "\n");
            if (csv) atomic_write(std::filesystem::path(dir) / (name + ".csv"), csv->str(header));
        }
        if (format == "csv" && csv)
            std::cout << csv->str(header);
        else
            std::cout << full.dump(2) << "\n";
    }
};

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json constants_json(const CorrectionConstants& c) {
    return {{"nu1", num(c.nu1)},         {"nu2", num(c.nu2)},     {"zeta1", num(c.zeta1)},
            {"zeta2", num(c.zeta2)},     {"nu1_closed", num(c.nu1_closed)},
            {"a10", num(c.a10)},         {"a11", num(c.a11)},     {"q0", num(c.q0)},
            {"q1", num(c.q1)},           {"fit_residual", num(c.fit_residual)},
            {"window", {num(c.window_near), num(c.window_far)}}, {"widened", c.widened}};
}

json params_json(const AnsatzParams& p) {
    return {{"lambda", num(p.lambda)},   {"eps", num(p.eps)},         {"eta", num(p.eta)},
            {"delta", num(p.delta)},     {"delta1", num(p.delta1)},   {"mu", num(p.mu)},
            {"mu_tilde", num(p.mu_tilde)}, {"gamma_eps", num(p.gamma_eps)}, {"r_tilde", num(p.r_tilde)},
            {"H0", num(p.H0)},           {"H0_negative", p.H0_negative}, {"A", num(p.A)},
            {"B", num(p.B)},             {"constants", constants_json(p.constants)}};
}

json report_json(const ResidualReport& r) {
    return {{"sup_weighted_inner", num(r.sup_weighted_inner)}, {"l1_outer", num(r.l1_outer)},
            {"star", num(r.star)},       {"starstar", num(r.starstar)}, {"sigma_fit", num(r.sigma_fit)},
            {"l1_annulus", num(r.l1_annulus)}, {"sup_inner", num(r.sup_inner)},
            {"sup_middle", num(r.sup_middle)}, {"sup_all", num(r.sup_all)}};
}

CsvTable ansatz_table(const Profile& p) {
    CsvTable t({"r", "U", "dU", "piece"});
    for (std::size_t i = 0; i < p.size(); ++i)
        t.add_row({format_double(p.r[i]), format_double(p.u[i]), format_double(p.d1[i]),
                   std::to_string(int(p.piece[i]))});
    return t;
}

struct AnsatzBuild {
    Profile profile;
    AnsatzParams params;  ///< filled for k = 0
    json meta;
    double mu = 1.0;
    double delta = 0.0, delta1 = 0.0;
};

AnsatzBuild make_ansatz(double lambda, int k, OuterMode mode, const AnsatzOptions& opt) {
    AnsatzBuild b;
    if (k == 0) {
        const auto s = build_ansatz(lambda, opt);
        b.profile = s.ansatz.sample(s.ansatz.grid(opt.grid_nodes));
        b.params = s.params;
        b.meta = params_json(s.params);
        b.mu = s.params.mu;
        b.delta = s.params.delta;
        b.delta1 = s.params.delta1;
    } else {
        const auto m = multilayer_ansatz(k, lambda, mode, opt);
        b.profile = m.ansatz.sample(m.ansatz.grid(opt.grid_nodes));
        b.mu = m.ansatz.inner.mu();
        b.delta = m.ansatz.delta;
        b.delta1 = m.ansatz.delta1;
        b.meta = {{"lambda", num(lambda)},
                  {"eps", num(m.ansatz.eps)},
                  {"k", k},
                  {"outer", to_string(mode)},
                  {"b", num(m.b)},
                  {"alphas", m.layers.config.alphas},
                  {"gamma", m.parameters.gamma},
                  {"sigma", m.parameters.sigma},
                  {"r_tilde", num(m.r_tilde)},
                  {"H0", num(m.H0)},
                  {"mu", num(b.mu)},
                  {"delta", num(b.delta)},
                  {"delta1", num(b.delta1)}};
    }
    return b;
}

std::vector<double> default_grid(double lambda, std::size_t nodes) {
    if (lambda < 1.0 / std::numbers::e) return bvp_grid(lambda, solve_epsilon(lambda), nodes);
    return graded_grid(nodes, 0.05, 0.05);
}

json point_json(const BranchPoint& p) {
    std::vector<double> dens(p.profile.size());
    for (std::size_t i = 0; i < dens.size(); ++i) dens[i] = p.lambda * std::exp(p.profile.u[i]);
    return {{"lambda", num(p.lambda)},
            {"u0", num(p.u0_value)},
            {"u1", num(p.profile.u.back())},
            {"zero_count", p.zero_count},
            {"newton_iters", p.newton_iters},
            {"residual_norm", num(p.residual_norm)},
            {"residual_history", p.residual_history},
            {"total_mass", num(l1_disk(p.profile.r, dens, 0.0, 1.0, false))}};
}

double lambda_from_header(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("# lambda=", 0) == 0) return std::stod(line.substr(9));
        if (!line.empty() && line[0] != '#') break;
    }
    throw DomainError("report: --lambda not given and the profile carries no '# lambda=' line");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layered radial steady states of the Keller-Segel equation on the unit disk", "kslayers"};
    app.option_defaults()->always_capture_default();
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    app.fallthrough();
    Output out;
    app.add_option("--out", out.dir, "Directory for JSON/CSV artifacts");
    app.add_option("--format", out.format, "Format printed to stdout")->check(CLI::IsMember({"json", "csv"}));

    std::string outer = "dirichlet";
    const auto outer_check = CLI::IsMember({"dirichlet", "dirichlet_one", "neumann"});
    double eta = kDefaultEta;
    std::string matching = "leading";
    std::size_t nodes = 4000;

    auto* green = app.add_subcommand("green", "Layered Green's function U_{b,k}");
    int g_k = 1;
    double g_b = 0.0;
    std::size_t g_grid = 0;
    green->add_option("--k", g_k, "Number of free layers")->check(CLI::Range(0, kKMax));
    green->add_option("--b", g_b, "Singular coefficient")->required()->check(CLI::PositiveNumber);
    green->add_option("--outer", outer)->check(outer_check);
    green->add_option("--grid-n", g_grid, "Sample the profile on n uniform radii in (0, 1]");

    auto* nondeg = app.add_subcommand("nondegen", "Sweep of the nondegeneracy determinant M_k");
    int n_kmax = 4;
    std::vector<double> n_bs{1e-4, 1e-3, 1e-2};
    nondeg->add_option("--kmax", n_kmax)->check(CLI::Range(1, kKMax));
    nondeg->add_option("--b-grid", n_bs)->delimiter(',')->check(CLI::PositiveNumber);
    nondeg->add_option("--outer", outer)->check(outer_check);

    auto* ans = app.add_subcommand("ansatz", "Matched-asymptotic approximate solution");
    auto* res = app.add_subcommand("residual", "Residual norms of the approximate solution");
    auto* fix = app.add_subcommand("fixpoint", "Contraction iteration for the correction");
    double lambda = 0.0;
    int a_k = 0;
    for (auto* s : {ans, res, fix}) {
        s->add_option("--lambda", lambda)->required()->check(CLI::PositiveNumber);
        s->add_option("--eta", eta, "Layer cutoff exponent");
        s->add_option("--matching", matching)->check(CLI::IsMember({"leading", "extended"}));
        s->add_option("--nodes", nodes)->check(CLI::Range(100, 1000000));
    }
    for (auto* s : {ans, res}) {
        s->add_option("--k", a_k, "Number of free interior layers (0: boundary layer only)")->check(CLI::Range(0, kKMax));
        s->add_option("--outer", outer)->check(outer_check);
    }
    double f_sigma = 0.1, f_rho = 4.0;
    int f_iters = 60;
    fix->add_option("--sigma", f_sigma)->check(CLI::PositiveNumber);
    fix->add_option("--rho-factor", f_rho)->check(CLI::PositiveNumber);
    fix->add_option("--max-iterations", f_iters)->check(CLI::Range(1, 10000));

    auto* probe = app.add_subcommand("probe", "Linear probe over a lambda ladder");
    std::vector<double> p_lams{1e-2, 1e-3, 1e-4, 1e-5};
    std::uint64_t seed = 12345;
    int p_count = 10;
    probe->add_option("--lambdas", p_lams)->delimiter(',')->check(CLI::PositiveNumber);
    probe->add_option("--seed", seed);
    probe->add_option("--count", p_count)->check(CLI::Range(1, 100000));
    probe->add_option("--eta", eta);
    probe->add_option("--nodes", nodes)->check(CLI::Range(100, 1000000));

    auto* solve = app.add_subcommand("solve", "Direct Newton solve of the radial problem");
    std::string s_init = "ansatz", s_in;
    double s_value = 0.0, s_tol = 1e-12;
    int s_k = 0;
    solve->add_option("--lambda", lambda)->required()->check(CLI::PositiveNumber);
    solve->add_option("--init", s_init)->check(CLI::IsMember({"ansatz", "constant", "file"}));
    solve->add_option("--k", s_k)->check(CLI::Range(0, kKMax));
    solve->add_option("--outer", outer)->check(outer_check);
    solve->add_option("--in", s_in, "Profile CSV for --init file");
    solve->add_option("--value", s_value, "Constant initial value for --init constant");
    solve->add_option("--tol", s_tol)->check(CLI::PositiveNumber);
    solve->add_option("--eta", eta);
    solve->add_option("--nodes", nodes)->check(CLI::Range(100, 1000000));

    auto* branch = app.add_subcommand("branch", "Bifurcation branch from (lambda_i^rad, 1)");
    int b_i = 2, b_steps = 20;
    std::string b_sign = "+";
    double b_ds = 0.05;
    std::size_t b_nodes = 2001;
    branch->add_option("--i", b_i)->check(CLI::Range(2, 50));
    branch->add_option("--sign", b_sign)->check(CLI::IsMember({"+", "-", "plus", "minus"}));
    branch->add_option("--steps", b_steps)->check(CLI::Range(1, 100000));
    branch->add_option("--ds", b_ds)->check(CLI::PositiveNumber);
    branch->add_option("--nodes", b_nodes)->check(CLI::Range(100, 1000000));

    auto* report = app.add_subcommand("report", "Concentration diagnostics of a solved profile");
    std::string r_in;
    int r_k = 0;
    std::optional<double> r_lambda;
    report->add_option("--in", r_in)->required()->check(CLI::ExistingFile);
    report->add_option("--k", r_k)->check(CLI::Range(0, kKMax));
    report->add_option("--outer", outer)->check(outer_check);
    report->add_option("--lambda", r_lambda, "Defaults to the profile's '# lambda=' line")->check(CLI::PositiveNumber);

    try {
        const auto args = expand_config(argc, argv);
        std::vector<const char*> cargv;
        for (const auto& a : args) cargv.push_back(a.c_str());
        app.parse(int(cargv.size()), const_cast<char**>(cargv.data()));
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    } catch (const DomainError& e) {
        std::cerr << "kslayers: " << e.what() << "\n";
        return kExitValidation;
    }

    const CLI::App* active = app.get_subcommands().front();
    out.echo = config_echo(*active);
    const OuterMode mode = parse_outer_mode(outer);
    AnsatzOptions aopt;
    aopt.eta = eta;
    aopt.matching = matching == "extended" ? MatchingOrder::extended : MatchingOrder::leading;
    aopt.grid_nodes = nodes;

    try {
        if (active == green) {
            const auto sol = solve_layers(g_k, g_b, mode);
            json coeffs = json::array();
            for (const auto& p : sol.green.pieces)
                coeffs.push_back({{"lo", num(p.lo)}, {"hi", num(p.hi)}, {"cK", num(p.cK)}, {"cI", num(p.cI)}});
            json j{{"k", g_k},
                   {"b", num(g_b)},
                   {"outer", to_string(mode)},
                   {"alphas", sol.config.alphas},
                   {"layer_radii", sol.config.layer_radii()},
                   {"residual", num(sol.config.residual)},
                   {"iterations", sol.config.iterations},
                   {"coeffs", coeffs}};
            CsvTable t({"r", "G", "dG"});
            for (std::size_t i = 1; i <= g_grid; ++i) {
                const double r = double(i) / double(g_grid);
                t.add_row(std::vector<double>{r, sol.green.value(r), sol.green.deriv(r)});
            }
            out.emit("green", j, g_grid ? &t : nullptr);
        } else if (active == nondeg) {
            struct Job { int k; double b; };
            std::vector<Job> jobs;
            for (int k = 1; k <= n_kmax; ++k)
                for (double b : n_bs) jobs.push_back({k, b});
            std::vector<MkRow> rows(jobs.size());
            parallel_for(jobs.size(), [&](std::size_t i) { rows[i] = mk_sweep_row(jobs[i].k, jobs[i].b, mode); });
            CsvTable t({"k", "b", "M_k", "cond"});
            double min_abs = INFINITY;
            for (const auto& r : rows) {
                t.add_row({std::to_string(r.k), format_double(r.b), format_double(r.Mk), format_double(r.cond)});
                min_abs = std::min(min_abs, std::abs(r.Mk));
            }
            json j{{"rows", rows.size()}, {"min_abs_Mk", num(min_abs)}, {"all_nonzero", min_abs > 0.0},
                   {"outer", to_string(mode)}};
            out.emit("nondegen", j, &t);
        } else if (active == ans) {
            const auto b = make_ansatz(lambda, a_k, mode, aopt);
            const auto t = ansatz_table(b.profile);
            out.emit("ansatz", b.meta, &t);
        } else if (active == res) {
            const auto b = make_ansatz(lambda, a_k, mode, aopt);
            Regions rg{b.delta, b.delta1};
            const auto rf = residual(b.profile, lambda, &rg);
            json j = report_json(rf.report);
            j["ansatz"] = b.meta;
            CsvTable t({"r", "R"});
            for (std::size_t i = 0; i < rf.R.size(); ++i) t.add_row(std::vector<double>{b.profile.r[i], rf.R[i]});
            out.emit("residual", j, &t);
        } else if (active == fix) {
            const auto b = make_ansatz(lambda, 0, mode, aopt);
            FixedPointOptions fo;
            fo.max_iterations = f_iters;
            const auto fp = fixed_point(b.profile, lambda, b.params.eps, f_sigma, f_rho, fo, b.mu);
            CsvTable t({"iteration", "increment", "norm"});
            for (std::size_t i = 0; i < fp.increments.size(); ++i)
                t.add_row({std::to_string(i + 1), format_double(fp.increments[i]), format_double(fp.norms[i + 1])});
            json j{{"factor", num(fp.factor)},         {"radius", num(fp.radius)},
                   {"phi1_sup", num(fp.phi1_sup)},     {"residual_before", num(fp.residual_before)},
                   {"residual_after", num(fp.residual_after)}, {"iterations", fp.iterations},
                   {"increments", fp.increments}};
            out.emit("fixpoint", j, &t);
        } else if (active == probe) {
            if (!std::is_sorted(p_lams.rbegin(), p_lams.rend()) ||
                std::adjacent_find(p_lams.begin(), p_lams.end()) != p_lams.end())
                throw DomainError("probe: --lambdas must be strictly descending");
            std::vector<ProbeResult> pr(p_lams.size());
            parallel_for(p_lams.size(), [&](std::size_t i) {
                const auto b = make_ansatz(p_lams[i], 0, mode, aopt);
                pr[i] = linear_probe(b.profile, p_lams[i], seed, p_count, b.mu);
            });
            CsvTable t({"lambda", "sup_ratio_star", "sup_ratio_starstar"});
            double lo = INFINITY, hi = 0.0;
            for (const auto& p : pr) {
                t.add_row(std::vector<double>{p.lambda, p.sup_ratio_star, p.sup_ratio_starstar});
                lo = std::min(lo, p.sup_ratio_star);
                hi = std::max(hi, p.sup_ratio_star);
            }
            json j{{"seed", seed}, {"count", p_count}, {"spread_star", num(hi / lo)}};
            out.emit("probe", j, &t);
        } else if (active == solve) {
            Profile guess;
            if (s_init == "ansatz") {
                guess = make_ansatz(lambda, s_k, mode, aopt).profile;
            } else if (s_init == "constant") {
                guess = constant_profile(default_grid(lambda, nodes), s_value);
            } else {
                if (s_in.empty()) throw DomainError("solve: --init file needs --in");
                guess = read_profile_csv(s_in);
            }
            NewtonOptions no;
            no.tol = s_tol;
            const auto pt = solve_bvp(lambda, guess, no);
            const auto t = profile_table(pt.profile);
            out.emit("solve", point_json(pt), &t);
        } else if (active == branch) {
            const int sign = (b_sign == "+" || b_sign == "plus") ? 1 : -1;
            const auto grid = graded_grid(b_nodes, 0.05, 0.05);
            BranchOptions bo;
            bo.ds = b_ds;
            const auto seeds = seed_branch(b_i, sign, grid, bo);
            std::vector<BranchPoint> pts = seeds;
            int code = 0;
            std::string reason;
            try {
                const auto br = continue_branch(seeds[0], seeds[1], b_steps, bo);
                pts.insert(pts.end(), br.points.begin(), br.points.end());
            } catch (const BranchStall& e) {
                pts.insert(pts.end(), e.branch.begin(), e.branch.end());
                code = kExitSolver;
                reason = e.what();
            }
            CsvTable t({"mu", "u0", "zero_count", "newton_iters", "residual_norm"});
            for (const auto& p : pts)
                t.add_row({format_double(p.lambda), format_double(p.u0_value), std::to_string(p.zero_count),
                           std::to_string(p.newton_iters), format_double(p.residual_norm)});
            json j{{"i", b_i},
                   {"sign", sign},
                   {"lambda_rad", num(radial_eigenvalues(b_i).back())},
                   {"points", pts.size()},
                   {"stalled", code != 0},
                   {"reason", reason}};
            out.emit("branch", j, &t);
            if (code) std::cerr << "kslayers: " << reason << "\n";
            return code;
        } else if (active == report) {
            const Profile p = read_profile_csv(r_in);
            const double lam = r_lambda ? *r_lambda : lambda_from_header(r_in);
            const RadialFD fd(p.r);
            const BranchPoint pt = make_point(fd, {Form::keller_segel, std::log(lam)}, p.u);
            const double eps = solve_epsilon(lam);
            LayerSolveOptions lo;
            lo.b_max = 0.5;
            const auto ref = solve_layers(r_k, 4.0 * eps / std::numbers::sqrt2, mode, lo);
            const auto c = concentration_report(pt, ref, eps);
            json j{{"lambda", num(lam)},
                   {"eps", num(eps)},
                   {"origin_mass", num(c.origin_mass)},
                   {"total_mass", num(c.total_mass)},
                   {"layer_fluxes", c.layer_fluxes},
                   {"boundary_mass", num(c.boundary_mass)},
                   {"boundary_inner_radius", num(c.boundary_inner_radius)},
                   {"profile_gap", num(c.profile_gap)},
                   {"exclusion_radius", num(c.exclusion_radius)},
                   {"gap_samples", c.gap_samples},
                   {"residual_norm", num(pt.residual_norm)}};
            out.emit("report", j);
        }
    } catch (const DomainError& e) {
        std::cerr << "kslayers: " << e.what() << "\n";
        return kExitValidation;
    } catch (const NumericalError& e) {
        std::cerr << "kslayers: " << e.what() << "\n";
        return kExitSolver;
    } catch (const std::exception& e) {
        std::cerr << "kslayers: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
