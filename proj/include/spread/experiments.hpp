#pragma once

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "spread/config.hpp"
#include "spread/limitlaw.hpp"
#include "spread/spatial.hpp"
#include "spread/stats.hpp"

namespace spread::experiments {

using config::ExperimentConfig;

/// Fans run indices out over a worker pool; each worker owns its own rng
/// stream (derived from master seed + run index by the caller), so the
/// aggregate is independent of scheduling.
template <typename F> inline void for_each_run(int runs, F&& f) {
    unsigned hw = std::thread::hardware_concurrency();
    unsigned workers = std::max(1u, std::min(hw, unsigned(std::max(runs, 1))));
    if (workers <= 1) {
        for (int i = 0; i < runs; ++i) f(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex err_mx;
    std::exception_ptr err;
    auto worker = [&] {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= runs) return;
            try {
                f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mx);
                if (!err) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned k = 0; k < workers; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

/// log of the martingale statistic at time s, computed from the run's own
/// island birth times (the early phase coincides with the branching process
/// with high probability, so the branching formulas apply directly).
template <int D>
inline double early_growth_log_W(const spatial::SpatialState<D>& st, double s) {
    const auto& p = st.params;
    branching::MomentState ms;
    ms.t = s;
    ms.M.assign(std::size_t(p.r) + 1, 0.0);
    for (const auto& isl : st.islands) {
        if (isl.birth > s) break; // islands are listed in birth order
        ms.births.push_back(isl.birth);
        double age = s - isl.birth;
        double pw = 1.0;
        for (int l = 0; l <= p.r; ++l) {
            ms.M[std::size_t(l)] += pw;
            pw *= age;
        }
    }
    return std::log(branching::W_statistics(p, ms).W_tilde);
}

// ---------------------------------------------------------------------------
// Pathwise profile comparison.
// ---------------------------------------------------------------------------

struct PathRun {
    int run = 0;
    double U_hat = 0.0;
    double D_sup = 0.0;
    double t_cov = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> fractions; // covered fraction at each grid x
    std::vector<double> reference; // eval_h(x + shift + U_hat)
    std::vector<double> tau_probes;
};

struct PathLlnReport {
    ExperimentConfig cfg;
    std::vector<double> xs;
    int m = 0;           // profile index (gossip d, small-world d-1)
    double shift = 0.0;  // log C_d (gossip) or log C~_d (small-world)
    double lambda0 = 1.0;
    double Lambda = 1.0;
    std::vector<PathRun> runs;
    double median_D = 0.0;
    double var_raw = 0.0;      // across-run variance of the fraction at x ~ 0
    double var_centered = 0.0; // same after subtracting the per-run reference
    double collapse_factor = 0.0;
    double mean_exp_U = 0.0;
    double se_exp_U = 0.0;
};

namespace detail {

template <int D>
PathLlnReport path_lln_impl(const ExperimentConfig& cfg, const limitlaw::LimitLaw& law) {
    auto R = config::resolve(cfg);
    if (D >= 2 && cfg.probes == 0)
        throw std::invalid_argument("d >= 2 profile estimation needs probes");
    PathLlnReport rep;
    rep.cfg = cfg;
    rep.xs = cfg.x_points();
    rep.m = law.m;
    rep.shift = std::log(cfg.kind == branching::Kind::gossip ? limitlaw::C_d(cfg.d)
                                                             : limitlaw::Ctilde_d(cfg.d));
    rep.lambda0 = R.params.lambda0;
    rep.Lambda = R.params.Lambda;
    rep.runs.resize(std::size_t(cfg.runs));
    const double T = R.t_full(cfg.x_max);

    for_each_run(cfg.runs, [&](int i) {
        Rng rng = Rng::for_run(cfg.seed, std::uint64_t(i));
        spatial::SimOptions opts;
        opts.n_probes = cfg.probes;
        auto st = spatial::simulate<D>(R.params, T, rng, opts);
        PathRun pr;
        pr.run = i;
        pr.U_hat = early_growth_log_W(st, R.s_lambda);
        pr.fractions.resize(rep.xs.size());
        pr.reference.resize(rep.xs.size());
        for (std::size_t j = 0; j < rep.xs.size(); ++j) {
            double t = R.t_full(rep.xs[j]);
            double frac;
            if constexpr (D == 1)
                frac = spatial::covered_fraction_exact_d1(st, t);
            else
                frac = spatial::covered_fraction_probe(st, t).value;
            pr.fractions[j] = frac;
            pr.reference[j] = limitlaw::eval_h(law, rep.xs[j] + rep.shift + pr.U_hat);
            pr.D_sup = std::max(pr.D_sup, std::abs(frac - pr.reference[j]));
        }
        try {
            pr.t_cov = spatial::coverage_time(st);
        } catch (const spatial::CoverageIncomplete&) {
        } catch (const std::invalid_argument&) {
        }
        pr.tau_probes = spatial::first_passage_times(st);
        rep.runs[std::size_t(i)] = std::move(pr);
    });

    std::vector<double> ds, eu;
    for (const auto& r : rep.runs) {
        ds.push_back(r.D_sup);
        eu.push_back(std::exp(r.U_hat));
    }
    rep.median_D = stats::median(ds);
    auto su = stats::summarize(eu);
    rep.mean_exp_U = su.mean;
    rep.se_exp_U = su.se;

    std::size_t ix0 = 0;
    for (std::size_t j = 1; j < rep.xs.size(); ++j)
        if (std::abs(rep.xs[j]) < std::abs(rep.xs[ix0])) ix0 = j;
    std::vector<double> raw, centered;
    for (const auto& r : rep.runs) {
        raw.push_back(r.fractions[ix0]);
        centered.push_back(r.fractions[ix0] - r.reference[ix0]);
    }
    rep.var_raw = stats::summarize(raw).sd;
    rep.var_raw *= rep.var_raw;
    rep.var_centered = stats::summarize(centered).sd;
    rep.var_centered *= rep.var_centered;
    rep.collapse_factor = rep.var_centered > 0.0
                              ? rep.var_raw / rep.var_centered
                              : std::numeric_limits<double>::infinity();
    return rep;
}

template <typename Fn> auto dispatch_d(int d, Fn&& fn) {
    switch (d) {
        case 1: return fn(std::integral_constant<int, 1>{});
        case 2: return fn(std::integral_constant<int, 2>{});
        case 3: return fn(std::integral_constant<int, 3>{});
        case 4: return fn(std::integral_constant<int, 4>{});
        default: throw std::invalid_argument("dimension must be in [1,4]");
    }
}

} // namespace detail

inline int profile_index(const ExperimentConfig& cfg) {
    return cfg.kind == branching::Kind::gossip ? cfg.d : cfg.d - 1;
}

inline PathLlnReport run_path_lln(const ExperimentConfig& cfg) {
    auto law = limitlaw::solve_h(profile_index(cfg));
    return detail::dispatch_d(cfg.d, [&](auto dc) {
        return detail::path_lln_impl<decltype(dc)::value>(cfg, law);
    });
}

inline PathLlnReport run_path_lln(const ExperimentConfig& cfg, const limitlaw::LimitLaw& law) {
    if (law.m != profile_index(cfg))
        throw std::invalid_argument("limit profile index does not match the process");
    return detail::dispatch_d(cfg.d, [&](auto dc) {
        return detail::path_lln_impl<decltype(dc)::value>(cfg, law);
    });
}

// ---------------------------------------------------------------------------
// First-passage survival versus the product-of-limits oracle.
// ---------------------------------------------------------------------------

struct DistanceReport {
    ExperimentConfig cfg;
    std::vector<double> xs;
    std::vector<double> empirical; // pooled P[tau_P > (logLambda + x)/lambda0]
    std::vector<double> oracle;    // mean over W pairs of exp(-e^x * C * W1 * W2)
    double sup_gap = 0.0;
    std::size_t pooled = 0;
};

namespace detail {

template <int D> DistanceReport distance_impl(const ExperimentConfig& cfg) {
    auto R = config::resolve(cfg);
    if (cfg.probes == 0) throw std::invalid_argument("distance experiment needs probes");
    DistanceReport rep;
    rep.cfg = cfg;
    rep.xs = cfg.x_points();
    const double T = R.t_full(cfg.x_max);

    std::vector<std::vector<double>> taus(std::size_t(cfg.runs));
    for_each_run(cfg.runs, [&](int i) {
        Rng rng = Rng::for_run(cfg.seed, std::uint64_t(i));
        spatial::SimOptions opts;
        opts.n_probes = cfg.probes;
        auto st = spatial::simulate<D>(R.params, T, rng, opts);
        taus[std::size_t(i)] = spatial::first_passage_times(st);
    });

    rep.empirical.assign(rep.xs.size(), 0.0);
    for (const auto& run_taus : taus) {
        rep.pooled += run_taus.size();
        for (double tau : run_taus)
            for (std::size_t j = 0; j < rep.xs.size(); ++j)
                if (tau > R.t_full(rep.xs[j])) rep.empirical[j] += 1.0;
    }
    for (double& e : rep.empirical) e /= double(rep.pooled);

    double C = cfg.kind == branching::Kind::gossip ? limitlaw::C_d(cfg.d)
                                                   : limitlaw::Ctilde_d(cfg.d);
    Rng wrng = Rng::for_run(cfg.seed, (std::uint64_t(1) << 32) + 1);
    std::vector<double> w1(cfg.w_pairs), w2(cfg.w_pairs);
    for (std::size_t k = 0; k < cfg.w_pairs; ++k) {
        w1[k] = branching::sample_W(R.params, cfg.budget_B, wrng);
        w2[k] = branching::sample_W(R.params, cfg.budget_B, wrng);
    }
    rep.oracle.assign(rep.xs.size(), 0.0);
    for (std::size_t j = 0; j < rep.xs.size(); ++j) {
        double a = std::exp(rep.xs[j]) * C;
        double acc = 0.0;
        for (std::size_t k = 0; k < cfg.w_pairs; ++k) acc += std::exp(-a * w1[k] * w2[k]);
        rep.oracle[j] = acc / double(cfg.w_pairs);
        rep.sup_gap = std::max(rep.sup_gap, std::abs(rep.oracle[j] - rep.empirical[j]));
    }
    return rep;
}

} // namespace detail

inline DistanceReport run_distance(const ExperimentConfig& cfg) {
    return detail::dispatch_d(cfg.d, [&](auto dc) {
        return detail::distance_impl<decltype(dc)::value>(cfg);
    });
}

/// Closed-form small-world d=1 oracle: E[exp(-e^x W1 W2)] with W ~ Exp(1),
/// i.e. the integral of e^{-w}/(1 + e^x w); adaptive Simpson on a truncated
/// range (the integrand is dominated by e^{-w}).
inline double sw_d1_survival(double x) {
    double a = std::exp(x);
    auto f = [a](double w) { return std::exp(-w) / (1.0 + a * w); };
    const double hi = 45.0;
    const int n = 20000; // even
    double h = hi / n;
    double acc = f(0.0) + f(hi);
    for (int i = 1; i < n; ++i) acc += f(i * h) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

// ---------------------------------------------------------------------------
// Coverage-time ensemble.
// ---------------------------------------------------------------------------

/// Constant c0 realizing n(s) <= c0 * L / (vK s^d) for an explicit grid
/// covering of the torus/rectangle by balls K(P, s).
inline double covering_constant(const geometry::ManifoldSpec& spec, double s) {
    if (!(s > 0.0)) throw std::invalid_argument("covering radius must be positive");
    double g = spec.ball_shape == geometry::BallShape::sup
                   ? 2.0 * spec.ball_scale * s
                   : 2.0 * spec.ball_scale * s / std::sqrt(double(spec.d));
    double n = 1.0;
    for (double side : spec.sides) n *= std::ceil(side / g);
    return n * spec.vK * std::pow(s, spec.d) / spec.volume();
}

struct CoverageReport {
    ExperimentConfig cfg;
    double lambda0 = 1.0;
    double log_Lambda = 0.0;
    double additive_budget = 0.0; // slack*(logL)^{1/(d+1)} + 2*(72 logL / d!)^{1/d}
    double c0 = 0.0;              // covering constant at s = 1/lambda0
    std::vector<double> t_cov;    // per run; +inf when the horizon was too short
    double frac_within_budget = 0.0; // 0 <= lambda0*t_cov - logLambda <= budget
    double frac_ratio_in_12 = 0.0;   // lambda0*t_cov / logLambda in [1, 2]
    double mean_excess = 0.0;        // mean of lambda0*t_cov - logLambda
};

namespace detail {

template <int D> CoverageReport coverage_impl(const ExperimentConfig& cfg) {
    auto R = config::resolve(cfg);
    if (D >= 2 && cfg.probes == 0)
        throw std::invalid_argument("d >= 2 coverage detection needs probes");
    CoverageReport rep;
    rep.cfg = cfg;
    rep.lambda0 = R.params.lambda0;
    rep.log_Lambda = R.log_Lambda;
    rep.additive_budget =
        cfg.coverage_slack * std::pow(R.log_Lambda, 1.0 / double(cfg.d + 1)) +
        2.0 * std::pow(72.0 * R.log_Lambda / branching::factorial(cfg.d), 1.0 / double(cfg.d));
    rep.c0 = covering_constant(R.params.manifold, 1.0 / R.params.lambda0);
    rep.t_cov.assign(std::size_t(cfg.runs), 0.0);

    const double T = 3.0 * R.log_Lambda / R.params.lambda0;
    for_each_run(cfg.runs, [&](int i) {
        Rng rng = Rng::for_run(cfg.seed, std::uint64_t(i));
        spatial::SimOptions opts;
        opts.n_probes = cfg.probes;
        opts.stop_when_covered = true;
        auto st = spatial::simulate<D>(R.params, T, rng, opts);
        rep.t_cov[std::size_t(i)] =
            st.covered ? st.covered_at : std::numeric_limits<double>::infinity();
    });

    std::size_t ok = 0, ratio12 = 0;
    std::vector<double> excess;
    for (double tc : rep.t_cov) {
        if (!std::isfinite(tc)) continue;
        double ex = rep.lambda0 * tc - rep.log_Lambda;
        excess.push_back(ex);
        if (ex >= 0.0 && ex <= rep.additive_budget) ++ok;
        double ratio = rep.lambda0 * tc / rep.log_Lambda;
        if (ratio >= 1.0 && ratio <= 2.0) ++ratio12;
    }
    rep.frac_within_budget = double(ok) / double(cfg.runs);
    rep.frac_ratio_in_12 = double(ratio12) / double(cfg.runs);
    rep.mean_excess = excess.empty() ? std::numeric_limits<double>::quiet_NaN()
                                     : stats::summarize(excess).mean;
    return rep;
}

} // namespace detail

inline CoverageReport run_coverage(const ExperimentConfig& cfg) {
    return detail::dispatch_d(cfg.d, [&](auto dc) {
        return detail::coverage_impl<decltype(dc)::value>(cfg);
    });
}

// ---------------------------------------------------------------------------
// Intersection-count Poissonness.
// ---------------------------------------------------------------------------

struct IntersectionReport {
    ExperimentConfig cfg;
    double age_span = 0.0;
    double mu = 0.0; // predicted mean for the fixed ages, single collection
    double mean_N = 0.0;
    double se_N = 0.0;
    double tv = 0.0;
    double tv_se = 0.0;
    double tv_bound = 0.0; // 4 n p_Lambda^+
    double mu_prime = 0.0; // two-collection prediction
    double mean_cross = 0.0;
    double se_cross = 0.0;
    double tv_bound_cross = 0.0; // 2 (m+n) p_Lambda^+
    std::vector<std::uint64_t> counts;
    std::vector<std::uint64_t> cross_counts;
};

namespace detail {

template <int D> IntersectionReport intersections_impl(const ExperimentConfig& cfg) {
    auto R = config::resolve(cfg);
    IntersectionReport rep;
    rep.cfg = cfg;
    const int n = cfg.islands_n;
    if (n < 2) throw std::invalid_argument("need at least two islands");
    rep.age_span = cfg.age_span > 0.0 ? cfg.age_span : 0.5 * R.log_Lambda / R.params.lambda0;

    Rng age_rng = Rng::for_run(cfg.seed, (std::uint64_t(1) << 33) + 1);
    const double t_eval = rep.age_span;
    std::vector<double> births(std::size_t(n), 0.0);
    std::vector<double> births2(std::size_t(n), 0.0);
    for (auto& b : births) b = age_rng.uniform_in(0.0, rep.age_span);
    for (auto& b : births2) b = age_rng.uniform_in(0.0, rep.age_span);

    Rng rng = Rng::for_run(cfg.seed, (std::uint64_t(1) << 34) + 1);
    rep.counts.reserve(cfg.placements);
    rep.cross_counts.reserve(cfg.placements);
    std::vector<geometry::Island<D>> set1;
    std::vector<geometry::Island<D>> set2;
    set1.resize(std::size_t(n));
    set2.resize(std::size_t(n));
    for (std::size_t pl = 0; pl < cfg.placements; ++pl) {
        for (int i = 0; i < n; ++i)
            set1[std::size_t(i)] = {geometry::sample_uniform<D>(R.params.manifold, rng),
                                    births[std::size_t(i)], i};
        for (int i = 0; i < n; ++i)
            set2[std::size_t(i)] = {geometry::sample_uniform<D>(R.params.manifold, rng),
                                    births2[std::size_t(i)], i};
        auto self = spatial::intersection_stats<D>(R.params, set1, t_eval);
        auto cross = spatial::intersection_stats<D>(R.params, set1, t_eval, set2, t_eval);
        rep.counts.push_back(self.n_pairs);
        rep.cross_counts.push_back(cross.n_pairs);
        if (pl == 0) {
            rep.mu = self.mu;
            rep.tv_bound = self.tv_bound;
            rep.mu_prime = cross.mu_prime;
            rep.tv_bound_cross = cross.tv_bound;
        }
    }

    std::vector<double> vals(rep.counts.begin(), rep.counts.end());
    auto s = stats::summarize(vals);
    rep.mean_N = s.mean;
    rep.se_N = s.se;
    std::vector<double> cvals(rep.cross_counts.begin(), rep.cross_counts.end());
    auto sc = stats::summarize(cvals);
    rep.mean_cross = sc.mean;
    rep.se_cross = sc.se;

    rep.tv = stats::tv_to_poisson(rep.counts, rep.mu);
    Rng boot_rng = Rng::for_run(cfg.seed, (std::uint64_t(1) << 35) + 1);
    auto tv_stat = [&](const std::vector<double>& xs) {
        std::vector<std::uint64_t> cs(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) cs[i] = std::uint64_t(xs[i] + 0.5);
        return stats::tv_to_poisson(cs, rep.mu);
    };
    rep.tv_se = stats::bootstrap_se(vals, tv_stat, 1000, boot_rng);
    return rep;
}

} // namespace detail

inline IntersectionReport run_intersections(const ExperimentConfig& cfg) {
    return detail::dispatch_d(cfg.d, [&](auto dc) {
        return detail::intersections_impl<decltype(dc)::value>(cfg);
    });
}

// ---------------------------------------------------------------------------
// Writers. All numeric output goes through one fixed-format path so that a
// (config, seed) pair pins the bytes.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double x) {
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    std::string s;
    spatial::detail::append_number(s, x);
    return s;
}

} // namespace detail

inline void write_csv(std::ostream& os, const PathLlnReport& rep) {
    os << "run,x,fraction,reference\n";
    for (const auto& r : rep.runs)
        for (std::size_t j = 0; j < rep.xs.size(); ++j)
            os << r.run << ',' << detail::fmt(rep.xs[j]) << ',' << detail::fmt(r.fractions[j])
               << ',' << detail::fmt(r.reference[j]) << '\n';
}

inline nlohmann::json to_json(const PathLlnReport& rep) {
    nlohmann::json j;
    j["config"] = config::config_to_json(rep.cfg);
    j["m"] = rep.m;
    j["shift"] = rep.shift;
    j["lambda0"] = rep.lambda0;
    j["Lambda"] = rep.Lambda;
    j["median_D"] = rep.median_D;
    j["var_raw"] = rep.var_raw;
    j["var_centered"] = rep.var_centered;
    j["collapse_factor"] = rep.collapse_factor;
    j["mean_exp_U"] = rep.mean_exp_U;
    j["se_exp_U"] = rep.se_exp_U;
    auto runs = nlohmann::json::array();
    for (const auto& r : rep.runs) {
        nlohmann::json jr;
        jr["run"] = r.run;
        jr["U_hat"] = r.U_hat;
        jr["D_sup"] = r.D_sup;
        jr["t_cov"] = std::isfinite(r.t_cov) ? nlohmann::json(r.t_cov) : nlohmann::json();
        runs.push_back(jr);
    }
    j["runs"] = runs;
    return j;
}

inline void write_csv(std::ostream& os, const DistanceReport& rep) {
    os << "x,empirical,oracle,gap\n";
    for (std::size_t j = 0; j < rep.xs.size(); ++j)
        os << detail::fmt(rep.xs[j]) << ',' << detail::fmt(rep.empirical[j]) << ','
           << detail::fmt(rep.oracle[j]) << ','
           << detail::fmt(rep.empirical[j] - rep.oracle[j]) << '\n';
}

inline nlohmann::json to_json(const DistanceReport& rep) {
    nlohmann::json j;
    j["config"] = config::config_to_json(rep.cfg);
    j["pooled"] = rep.pooled;
    j["sup_gap"] = rep.sup_gap;
    return j;
}

inline void write_csv(std::ostream& os, const CoverageReport& rep) {
    os << "run,t_cov,excess\n";
    for (std::size_t i = 0; i < rep.t_cov.size(); ++i) {
        double tc = rep.t_cov[i];
        os << i << ',' << detail::fmt(tc) << ','
           << detail::fmt(rep.lambda0 * tc - rep.log_Lambda) << '\n';
    }
}

inline nlohmann::json to_json(const CoverageReport& rep) {
    nlohmann::json j;
    j["config"] = config::config_to_json(rep.cfg);
    j["lambda0"] = rep.lambda0;
    j["log_Lambda"] = rep.log_Lambda;
    j["additive_budget"] = rep.additive_budget;
    j["c0"] = rep.c0;
    j["frac_within_budget"] = rep.frac_within_budget;
    j["frac_ratio_in_12"] = rep.frac_ratio_in_12;
    j["mean_excess"] = rep.mean_excess;
    return j;
}

inline void write_csv(std::ostream& os, const IntersectionReport& rep) {
    os << "placement,count,cross_count\n";
    for (std::size_t i = 0; i < rep.counts.size(); ++i)
        os << i << ',' << rep.counts[i] << ',' << rep.cross_counts[i] << '\n';
}

inline nlohmann::json to_json(const IntersectionReport& rep) {
    nlohmann::json j;
    j["config"] = config::config_to_json(rep.cfg);
    j["age_span"] = rep.age_span;
    j["mu"] = rep.mu;
    j["mean_N"] = rep.mean_N;
    j["se_N"] = rep.se_N;
    j["tv"] = rep.tv;
    j["tv_se"] = rep.tv_se;
    j["tv_bound"] = rep.tv_bound;
    j["mu_prime"] = rep.mu_prime;
    j["mean_cross"] = rep.mean_cross;
    j["se_cross"] = rep.se_cross;
    j["tv_bound_cross"] = rep.tv_bound_cross;
    return j;
}

} // namespace spread::experiments
