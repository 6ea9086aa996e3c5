// Command-line driver for the spread experiments. Subcommands mirror the
// library entry points; every run is pinned by (config, seed) and writes the
// same bytes on every invocation.

#include <CLI11.hpp>

#include <spread/config.hpp>
#include <spread/experiments.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

using namespace spread;
using config::ExperimentConfig;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> runs;
    std::optional<std::size_t> probes;
    std::optional<double> Lambda;
    std::string out;
    bool check = false;
};

void add_common(CLI::App* sub, Common& c, bool with_check = true) {
    sub->add_option("--config", c.config_path, "TOML or JSON experiment config");
    sub->add_option("--seed", c.seed, "master seed override");
    sub->add_option("--runs", c.runs, "ensemble size override");
    sub->add_option("--probes", c.probes, "probe count override");
    sub->add_option("--lambda", c.Lambda, "Lambda override");
    sub->add_option("--out", c.out, "output path prefix (writes <out>.csv and <out>.json)");
    if (with_check)
        sub->add_flag("--check", c.check, "exit nonzero unless the report meets its tolerance");
}

ExperimentConfig make_config(const Common& c) {
    ExperimentConfig cfg;
    if (!c.config_path.empty()) cfg = config::load_config(c.config_path);
    if (c.seed) cfg.seed = *c.seed;
    if (c.runs) cfg.runs = *c.runs;
    if (c.probes) cfg.probes = *c.probes;
    if (c.Lambda) cfg.Lambda = *c.Lambda;
    if (!c.out.empty()) cfg.out = c.out;
    return cfg;
}

template <typename Report> void write_outputs(const ExperimentConfig& cfg, const Report& rep) {
    if (cfg.out.empty()) return;
    {
        std::ofstream os(cfg.out + ".csv");
        if (!os) throw std::runtime_error("cannot write " + cfg.out + ".csv");
        experiments::write_csv(os, rep);
    }
    std::ofstream os(cfg.out + ".json");
    if (!os) throw std::runtime_error("cannot write " + cfg.out + ".json");
    os << experiments::to_json(rep).dump(2) << '\n';
    std::printf("wrote %s.csv and %s.json\n", cfg.out.c_str(), cfg.out.c_str());
}

int fail_check(const char* what) {
    std::printf("check FAILED: %s\n", what);
    return 1;
}

int run_path(const Common& c) {
    auto cfg = make_config(c);
    auto rep = experiments::run_path_lln(cfg);
    std::printf("profile m=%d shift=%.6f lambda0=%.6f Lambda=%.1f runs=%d\n", rep.m, rep.shift,
                rep.lambda0, rep.Lambda, cfg.runs);
    std::printf("median sup-gap=%.4f  collapse=%.2f  mean e^U=%.4f (se %.4f)\n", rep.median_D,
                rep.collapse_factor, rep.mean_exp_U, rep.se_exp_U);
    write_outputs(cfg, rep);
    if (!c.check) return 0;
    double tol = cfg.kind == branching::Kind::gossip ? cfg.path_tol : cfg.sw_path_tol;
    if (rep.median_D > tol) return fail_check("median sup-gap above tolerance");
    if (rep.collapse_factor < 3.0) return fail_check("variance collapse below 3");
    if (std::abs(rep.mean_exp_U - 1.0) > 3.0 * rep.se_exp_U)
        return fail_check("mean e^U not within 3 SE of 1");
    std::printf("check ok\n");
    return 0;
}

int run_dist(const Common& c) {
    auto cfg = make_config(c);
    auto rep = experiments::run_distance(cfg);
    std::printf("pooled=%zu  sup gap=%.4f (tolerance %.3f)\n", rep.pooled, rep.sup_gap,
                cfg.distance_tol);
    write_outputs(cfg, rep);
    if (!c.check) return 0;
    if (rep.sup_gap > cfg.distance_tol) return fail_check("survival sup gap above tolerance");
    std::printf("check ok\n");
    return 0;
}

int run_cov(const Common& c) {
    auto cfg = make_config(c);
    auto rep = experiments::run_coverage(cfg);
    std::printf("budget=%.3f  c0=%.3f  mean excess=%.3f\n", rep.additive_budget, rep.c0,
                rep.mean_excess);
    std::printf("excess in [0,budget]: %.1f%%  ratio in [1,2]: %.1f%%\n",
                100.0 * rep.frac_within_budget, 100.0 * rep.frac_ratio_in_12);
    write_outputs(cfg, rep);
    if (!c.check) return 0;
    if (rep.frac_within_budget < 0.95) return fail_check("fewer than 95% of runs inside budget");
    std::printf("check ok\n");
    return 0;
}

int run_inter(const Common& c) {
    auto cfg = make_config(c);
    auto rep = experiments::run_intersections(cfg);
    std::printf("self: mean=%.4f mu=%.4f (se %.4f)  tv=%.4f bound=%.4f (se %.4f)\n", rep.mean_N,
                rep.mu, rep.se_N, rep.tv, rep.tv_bound, rep.tv_se);
    std::printf("cross: mean=%.4f mu'=%.4f (se %.4f)\n", rep.mean_cross, rep.mu_prime,
                rep.se_cross);
    write_outputs(cfg, rep);
    if (!c.check) return 0;
    if (std::abs(rep.mean_N - rep.mu) > 3.0 * rep.se_N)
        return fail_check("intersection mean off by more than 3 SE");
    if (rep.tv > rep.tv_bound + 3.0 * rep.tv_se)
        return fail_check("Poisson distance above bound");
    if (std::abs(rep.mean_cross - rep.mu_prime) > 3.0 * rep.se_cross)
        return fail_check("cross-collection mean off by more than 3 SE");
    std::printf("check ok\n");
    return 0;
}

int run_simulate(const Common& c, double x_horizon, int run_index, bool log_events) {
    auto cfg = make_config(c);
    auto R = config::resolve(cfg);
    double T = R.t_full(x_horizon);
    Rng rng = Rng::for_run(cfg.seed, std::uint64_t(run_index));
    spatial::SimOptions opts;
    opts.n_probes = cfg.probes;
    opts.record_log = log_events;
    auto st = experiments::detail::dispatch_d(cfg.d, [&](auto dc) {
        constexpr int D = decltype(dc)::value;
        auto state = spatial::simulate<D>(R.params, T, rng, opts);
        std::printf("T=%.4f islands=%zu accepted=%zu candidates=%llu covered=%s\n", T,
                    state.islands.size(), state.accepted_times.size(),
                    static_cast<unsigned long long>(state.candidates),
                    state.covered ? "yes" : "no");
        if (state.covered) std::printf("covered at t=%.4f\n", state.covered_at);
        if (!cfg.out.empty()) {
            if (log_events) {
                std::ofstream os(cfg.out + ".events.jsonl");
                if (!os) throw std::runtime_error("cannot write event log");
                spatial::write_event_log_jsonl(os, state);
            }
            if (cfg.probes > 0) {
                std::ofstream os(cfg.out + ".probes.csv");
                if (!os) throw std::runtime_error("cannot write probe csv");
                spatial::write_probe_csv(os, state);
            }
            std::printf("wrote %s.*\n", cfg.out.c_str());
        }
        return 0;
    });
    return st;
}

int run_solve(int m, const std::string& out) {
    auto law = limitlaw::solve_h(m);
    std::printf("m=%d grid [%g, %g] step %g, %d iterations, residual=%.3e\n", law.m,
                law.grid.s_min, law.grid.s_max, law.grid.ds, law.iterations, law.residual);
    std::printf("phi(1)=%.8f  h(0)=%.8f\n", limitlaw::phi(law, 1.0),
                limitlaw::eval_h(law, 0.0));
    if (!out.empty()) {
        std::ofstream os(out + ".csv");
        if (!os) throw std::runtime_error("cannot write " + out + ".csv");
        os << "s,h\n";
        for (std::size_t i = 0; i < law.h.size(); ++i) {
            double s = law.grid.s_min + double(i) * law.grid.ds;
            os << experiments::detail::fmt(s) << ',' << experiments::detail::fmt(law.h[i])
               << '\n';
        }
        std::printf("wrote %s.csv\n", out.c_str());
    }
    return 0;
}

int run_preset(int N, double a, const std::string& out) {
    auto cfg = config::cd_preset(N, a);
    auto R = config::resolve(cfg);
    std::printf("N=%d a=%.3f: lambda0=%.6f Lambda=%.2f s_lambda=%.4f\n", N, a,
                R.params.lambda0, R.params.Lambda, R.s_lambda);
    auto j = config::config_to_json(cfg);
    if (out.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        std::ofstream os(out);
        if (!os) throw std::runtime_error("cannot write " + out);
        os << j.dump(2) << '\n';
        std::printf("wrote %s\n", out.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-driven spread processes: exact simulation, branching "
                 "approximation, limit profile"};
    app.require_subcommand(1);

    Common c_path, c_dist, c_cov, c_inter, c_sim;
    auto* path = app.add_subcommand("path-lln", "coverage profile ensemble vs limit curve");
    add_common(path, c_path);
    auto* dist = app.add_subcommand("distance", "pooled first-passage survival vs oracle");
    add_common(dist, c_dist);
    auto* cov = app.add_subcommand("coverage", "coverage-time ensemble");
    add_common(cov, c_cov);
    auto* inter = app.add_subcommand("intersections", "island intersection statistics");
    add_common(inter, c_inter);

    auto* sim = app.add_subcommand("simulate", "single exact run with optional event log");
    add_common(sim, c_sim, false);
    double x_horizon = 0.0;
    int run_index = 0;
    bool log_events = false;
    sim->add_option("--x", x_horizon, "horizon offset: T = (log Lambda + x) / lambda0");
    sim->add_option("--run", run_index, "run index within the seed's ensemble");
    sim->add_flag("--log-events", log_events, "record the full candidate log");

    auto* solve = app.add_subcommand("solve-h", "solve the limit profile ODE fixed point");
    int m = 1;
    std::string solve_out;
    solve->add_option("--m", m, "profile index (gossip d, small-world d-1)")->required();
    solve->add_option("--out", solve_out, "CSV output prefix");

    auto* preset = app.add_subcommand("cd-preset", "grid-model preset config");
    int N = 100;
    double a = 1.0;
    std::string preset_out;
    preset->add_option("--N", N, "grid side")->required();
    preset->add_option("--a", a, "density exponent, rho = N^-a (a < 3)")->required();
    preset->add_option("--out", preset_out, "write config JSON here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*path) return run_path(c_path);
        if (*dist) return run_dist(c_dist);
        if (*cov) return run_cov(c_cov);
        if (*inter) return run_inter(c_inter);
        if (*sim) return run_simulate(c_sim, x_horizon, run_index, log_events);
        if (*solve) return run_solve(m, solve_out);
        if (*preset) return run_preset(N, a, preset_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
