#include <catch2/catch_amalgamated.hpp>

#include <spread/config.hpp>
#include <spread/experiments.hpp>

#include <atomic>
#include <cmath>
#include <sstream>
#include <vector>

using namespace spread;
using config::ExperimentConfig;

TEST_CASE("config survives a json round trip") {
    ExperimentConfig c;
    c.kind = branching::Kind::small_world;
    c.d = 2;
    c.topology = geometry::Topology::rectangle;
    c.ball_shape = geometry::BallShape::sup;
    c.ball_scale = 0.75;
    c.vK = 2.25;
    c.Lambda = 3.5e3;
    c.rho = 0.01;
    c.sides = {40.0, 55.0};
    c.alpha = 0.31;
    c.runs = 17;
    c.probes = 333;
    c.seed = 99;
    c.x_min = -2.5;
    c.x_max = 3.5;
    c.x_step = 0.5;
    c.budget_B = 1234;
    c.w_pairs = 777;
    c.islands_n = 9;
    c.placements = 4321;
    c.age_span = 2.5;
    c.coverage_slack = 6.5;
    c.path_tol = 0.04;
    c.sw_path_tol = 0.08;
    c.distance_tol = 0.06;
    c.tolerance_note = "pinned by pilot";
    c.out = "scratch/run";

    auto j = config::config_to_json(c);
    auto back = config::config_from_json(j);

    CHECK(back.kind == c.kind);
    CHECK(back.d == c.d);
    CHECK(back.topology == c.topology);
    CHECK(back.ball_shape == c.ball_shape);
    CHECK(back.ball_scale == c.ball_scale);
    CHECK(back.vK == c.vK);
    CHECK(back.Lambda == c.Lambda);
    CHECK(back.rho == c.rho);
    CHECK(back.sides == c.sides);
    CHECK(back.alpha == c.alpha);
    CHECK(back.runs == c.runs);
    CHECK(back.probes == c.probes);
    CHECK(back.seed == c.seed);
    CHECK(back.x_min == c.x_min);
    CHECK(back.x_max == c.x_max);
    CHECK(back.x_step == c.x_step);
    CHECK(back.budget_B == c.budget_B);
    CHECK(back.w_pairs == c.w_pairs);
    CHECK(back.islands_n == c.islands_n);
    CHECK(back.placements == c.placements);
    CHECK(back.age_span == c.age_span);
    CHECK(back.coverage_slack == c.coverage_slack);
    CHECK(back.path_tol == c.path_tol);
    CHECK(back.sw_path_tol == c.sw_path_tol);
    CHECK(back.distance_tol == c.distance_tol);
    CHECK(back.tolerance_note == c.tolerance_note);
    CHECK(back.out == c.out);

    auto ra = config::resolve(c);
    auto rb = config::resolve(back);
    CHECK(rb.params.lambda0 == Catch::Approx(ra.params.lambda0).epsilon(1e-12));
    CHECK(rb.params.Lambda == Catch::Approx(ra.params.Lambda).epsilon(1e-12));
    CHECK(rb.s_lambda == Catch::Approx(ra.s_lambda).epsilon(1e-12));

    CHECK(config::config_to_json(back) == j);
}

TEST_CASE("json config accepts one level of grouping") {
    nlohmann::json grouped = {
        {"process", {{"kind", "small_world"}, {"d", 3}}},
        {"run", {{"runs", 7}, {"seed", 5}}},
        {"sides", {12.0, 12.0, 12.0}},
    };
    auto c = config::config_from_json(grouped);
    CHECK(c.kind == branching::Kind::small_world);
    CHECK(c.d == 3);
    CHECK(c.runs == 7);
    CHECK(c.seed == 5);
    CHECK(c.sides == std::vector<double>{12.0, 12.0, 12.0});

    nlohmann::json bad = {{"run", {{"run_count", 7}}}};
    CHECK_THROWS_WITH(config::config_from_json(bad),
                      Catch::Matchers::ContainsSubstring("run_count"));
}

TEST_CASE("toml subset maps onto the json config") {
    std::string text =
        "# spread experiment\n"
        "kind = \"gossip\"   # comment after value\n"
        "d = 2\n"
        "\n"
        "[run]\n"
        "runs = 12\n"
        "seed = 42\n"
        "probes = 250\n"
        "\n"
        "[grid]\n"
        "x_min = -3.0\n"
        "x_max = 3.0\n"
        "x_step = 0.25\n"
        "sides = [30.0, 30.0]\n"
        "tolerance_note = \"a # inside a string stays\"\n";
    std::istringstream in(text);
    auto j = config::toml_to_json(in);
    auto c = config::config_from_json(j);
    CHECK(c.kind == branching::Kind::gossip);
    CHECK(c.d == 2);
    CHECK(c.runs == 12);
    CHECK(c.seed == 42);
    CHECK(c.probes == 250);
    CHECK(c.x_min == -3.0);
    CHECK(c.x_max == 3.0);
    CHECK(c.x_step == 0.25);
    CHECK(c.sides == std::vector<double>{30.0, 30.0});
    CHECK(c.tolerance_note == "a # inside a string stays");

    nlohmann::json direct = {{"kind", "gossip"},   {"d", 2},        {"runs", 12},
                             {"seed", 42},         {"probes", 250}, {"x_min", -3.0},
                             {"x_max", 3.0},       {"x_step", 0.25}, {"sides", {30.0, 30.0}},
                             {"tolerance_note", "a # inside a string stays"}};
    auto cd = config::config_from_json(direct);
    CHECK(config::config_to_json(c) == config::config_to_json(cd));
}

TEST_CASE("toml reader reports the offending line") {
    auto parse = [](const std::string& text) {
        std::istringstream in(text);
        return config::toml_to_json(in);
    };
    CHECK_THROWS_WITH(parse("d = 1\nrubbish\n"),
                      Catch::Matchers::ContainsSubstring("line 2"));
    CHECK_THROWS_WITH(parse("[run\nruns = 3\n"),
                      Catch::Matchers::ContainsSubstring("line 1"));
    CHECK_THROWS_WITH(parse("d = 1\n\nx_min = oops\n"),
                      Catch::Matchers::ContainsSubstring("line 3"));
    CHECK_THROWS_WITH(parse("key =\n"), Catch::Matchers::ContainsSubstring("line 1"));
    CHECK_THROWS(config::config_from_json(parse("mystery = 3\n")));
}

TEST_CASE("grid preset exposes the stated scaling") {
    auto c = config::cd_preset(100, 1.0);
    CHECK(c.ball_scale == Catch::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-14));
    CHECK(c.vK == 0.5);
    CHECK(c.rho == Catch::Approx(0.01).epsilon(1e-14));
    CHECK(c.Lambda == Catch::Approx(2.0 * std::pow(100.0, 4.0 / 3.0)).epsilon(1e-13));
    auto r = config::resolve(c);
    CHECK(r.params.lambda0 == Catch::Approx(std::pow(100.0, -1.0 / 3.0)).epsilon(1e-12));
    CHECK(r.params.Lambda == Catch::Approx(c.Lambda).epsilon(1e-12));

    auto c0 = config::cd_preset(37, 0.0);
    auto r0 = config::resolve(c0);
    CHECK(r0.params.lambda0 == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(r0.params.Lambda == Catch::Approx(2.0 * 37.0 * 37.0).epsilon(1e-12));

    CHECK_THROWS_AS(config::cd_preset(100, 3.0), std::invalid_argument);
    CHECK_THROWS_AS(config::cd_preset(1, 1.0), std::invalid_argument);
}

TEST_CASE("x grid covers the configured window") {
    ExperimentConfig c;
    c.x_min = -4.0;
    c.x_max = 4.0;
    c.x_step = 0.25;
    auto xs = c.x_points();
    REQUIRE(xs.size() == 33);
    CHECK(xs.front() == -4.0);
    CHECK(xs.back() == Catch::Approx(4.0).margin(1e-12));
    for (std::size_t i = 1; i < xs.size(); ++i)
        CHECK(xs[i] - xs[i - 1] == Catch::Approx(0.25).margin(1e-12));

    c.x_step = -1.0;
    CHECK_THROWS_AS(c.x_points(), std::invalid_argument);
    c.x_step = 0.25;
    c.x_max = -5.0;
    CHECK_THROWS_AS(c.x_points(), std::invalid_argument);
}

TEST_CASE("resolve rejects out of range settings") {
    ExperimentConfig c;
    c.alpha = 0.5;
    CHECK_THROWS_AS(config::resolve(c), std::invalid_argument);
    c.alpha = 0.0;
    CHECK_THROWS_AS(config::resolve(c), std::invalid_argument);
    c.alpha = 0.49;
    c.runs = 0;
    CHECK_THROWS_AS(config::resolve(c), std::invalid_argument);
    c.runs = 1;
    c.Lambda = 1.0;
    CHECK_THROWS_AS(config::resolve(c), std::invalid_argument);
    c.sides = {50.0};
    c.d = 1;
    CHECK_NOTHROW(config::resolve(c));
}

TEST_CASE("resolve defaults pin lambda0 to one") {
    ExperimentConfig c;
    c.kind = branching::Kind::gossip;
    c.d = 2;
    c.Lambda = 5000.0;
    auto r = config::resolve(c);
    CHECK(r.params.lambda0 == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(r.params.Lambda == Catch::Approx(5000.0).epsilon(1e-12));
    CHECK(r.log_Lambda == Catch::Approx(std::log(5000.0)).epsilon(1e-14));
    CHECK(r.s_lambda ==
          Catch::Approx(0.5 * c.alpha * std::log(5000.0)).epsilon(1e-12));
    CHECK(r.t_full(0.7) == Catch::Approx(std::log(5000.0) + 0.7).epsilon(1e-12));
    CHECK(r.t_half(0.7) == Catch::Approx(0.5 * (std::log(5000.0) + 0.7)).epsilon(1e-12));
}

TEST_CASE("worker pool preserves run indexing") {
    const int runs = 97;
    std::vector<double> out(runs, -1.0);
    std::vector<std::atomic<int>> hits(runs);
    for (auto& h : hits) h = 0;
    experiments::for_each_run(runs, [&](int i) {
        out[std::size_t(i)] = double(i) * double(i);
        hits[std::size_t(i)]++;
    });
    for (int i = 0; i < runs; ++i) {
        CHECK(out[std::size_t(i)] == double(i) * double(i));
        CHECK(hits[std::size_t(i)] == 1);
    }
    CHECK_THROWS_AS(experiments::for_each_run(
                        4, [](int i) { if (i == 2) throw std::runtime_error("boom"); }),
                    std::runtime_error);
}

namespace {

template <int D>
spatial::SpatialState<D> state_with_births(const branching::ProcessParams& params,
                                           const std::vector<double>& births) {
    spatial::SpatialState<D> st;
    st.params = params;
    for (std::size_t i = 0; i < births.size(); ++i) {
        geometry::Island<D> isl;
        isl.birth = births[i];
        isl.id = std::int64_t(i);
        st.islands.push_back(isl);
    }
    st.t = births.empty() ? 0.0 : births.back();
    return st;
}

} // namespace

TEST_CASE("early growth statistic matches the hand formula") {
    ExperimentConfig c;
    c.kind = branching::Kind::gossip;
    c.d = 1;
    c.Lambda = 500.0;
    auto r = config::resolve(c);
    double l0 = r.params.lambda0;
    REQUIRE(r.params.r == 2);

    std::vector<double> births = {0.0, 0.4, 1.1};
    auto st = state_with_births<1>(r.params, births);
    double s = 2.0;
    double sum_age = 0.0;
    for (double b : births) sum_age += s - b;
    double w_expected = std::exp(-l0 * s) * (3.0 + l0 * sum_age);
    CHECK(experiments::early_growth_log_W<1>(st, s) ==
          Catch::Approx(std::log(w_expected)).epsilon(1e-12));

    // islands born after s are ignored (list is in birth order)
    auto st2 = state_with_births<1>(r.params, {0.0, 0.4, 1.1, 2.5});
    CHECK(experiments::early_growth_log_W<1>(st2, s) ==
          Catch::Approx(std::log(w_expected)).epsilon(1e-12));

    // r = 3 picks up the quadratic moment
    ExperimentConfig c2;
    c2.kind = branching::Kind::gossip;
    c2.d = 2;
    c2.Lambda = 500.0;
    auto r2 = config::resolve(c2);
    double m0 = 0, m1 = 0, m2 = 0;
    for (double b : births) {
        m0 += 1.0;
        m1 += s - b;
        m2 += (s - b) * (s - b);
    }
    double l2 = r2.params.lambda0;
    double w3 = std::exp(-l2 * s) * (m0 + l2 * m1 + 0.5 * l2 * l2 * m2);
    auto st3 = state_with_births<2>(r2.params, births);
    CHECK(experiments::early_growth_log_W<2>(st3, s) ==
          Catch::Approx(std::log(w3)).epsilon(1e-12));
}

TEST_CASE("covering constant is near one for matched radii") {
    auto spec = geometry::make_manifold(1, {100.0}, geometry::Topology::torus,
                                        geometry::BallShape::round, 1.0);
    // g = 2s; s = 5 tiles the circle exactly
    CHECK(experiments::covering_constant(spec, 5.0) == Catch::Approx(1.0).epsilon(1e-12));
    double c3 = experiments::covering_constant(spec, 3.0);
    CHECK(c3 >= 1.0);
    CHECK(c3 <= 1.0 + 6.0 / 100.0 + 1e-12);

    auto sup2 = geometry::make_manifold(2, {10.0, 10.0}, geometry::Topology::torus,
                                        geometry::BallShape::sup, 1.0);
    CHECK(experiments::covering_constant(sup2, 1.0) == Catch::Approx(1.0).epsilon(1e-12));

    auto round2 = geometry::make_manifold(2, {100.0, 100.0}, geometry::Topology::torus,
                                          geometry::BallShape::round, 1.0);
    double c2 = experiments::covering_constant(round2, 2.0);
    // squares of side 2s/sqrt(2) inscribed in the disc: pi/2 area overhead
    CHECK(c2 >= M_PI / 2.0 - 1e-12);
    CHECK(c2 <= M_PI / 2.0 * 1.1);

    CHECK_THROWS_AS(experiments::covering_constant(spec, 0.0), std::invalid_argument);
}

TEST_CASE("profile index follows the process kind") {
    ExperimentConfig c;
    c.kind = branching::Kind::gossip;
    c.d = 2;
    CHECK(experiments::profile_index(c) == 2);
    c.kind = branching::Kind::small_world;
    CHECK(experiments::profile_index(c) == 1);
    c.d = 1;
    CHECK(experiments::profile_index(c) == 0);

    ExperimentConfig g1;
    g1.kind = branching::Kind::gossip;
    g1.d = 1;
    g1.Lambda = 100.0;
    g1.runs = 1;
    auto law0 = limitlaw::solve_h(0);
    CHECK_THROWS_AS(experiments::run_path_lln(g1, law0), std::invalid_argument);
}

TEST_CASE("small world survival curve matches a direct monte carlo") {
    double prev = 1.0;
    for (double x = -6.0; x <= 6.0 + 1e-9; x += 0.5) {
        double v = experiments::sw_d1_survival(x);
        CHECK(v < prev);
        CHECK(v > 0.0);
        prev = v;
    }
    CHECK(experiments::sw_d1_survival(-10.0) > 0.999);
    CHECK(experiments::sw_d1_survival(10.0) < 0.05);

    // survival(x) = E exp(-e^x W1 W2) with independent unit exponentials
    Rng rng(2024);
    const int n = 200000;
    for (double x : {-1.0, 0.0, 1.0}) {
        double a = std::exp(x);
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
            double v = std::exp(-a * rng.exponential() * rng.exponential());
            sum += v;
            sumsq += v * v;
        }
        double mean = sum / n;
        double se = std::sqrt((sumsq / n - mean * mean) / n);
        CHECK(experiments::sw_d1_survival(x) == Catch::Approx(mean).margin(3.0 * se + 1e-4));
    }
}

TEST_CASE("path lln report is reproducible byte for byte") {
    ExperimentConfig c;
    c.kind = branching::Kind::gossip;
    c.d = 1;
    c.Lambda = 200.0;
    c.runs = 4;
    c.probes = 50;
    c.seed = 7;
    c.x_min = -1.0;
    c.x_max = 1.0;
    c.x_step = 0.5;
    auto law = limitlaw::solve_h(1);

    auto rep1 = experiments::run_path_lln(c, law);
    auto rep2 = experiments::run_path_lln(c, law);

    REQUIRE(rep1.runs.size() == 4);
    REQUIRE(rep1.xs.size() == 5);
    CHECK(rep1.m == 1);
    CHECK(rep1.shift == Catch::Approx(std::log(limitlaw::C_d(1))).epsilon(1e-14));
    CHECK(rep1.median_D == rep2.median_D);
    CHECK(rep1.mean_exp_U == rep2.mean_exp_U);
    CHECK(rep1.collapse_factor == rep2.collapse_factor);
    for (std::size_t i = 0; i < rep1.runs.size(); ++i) {
        CHECK(rep1.runs[i].run == int(i));
        CHECK(rep1.runs[i].U_hat == rep2.runs[i].U_hat);
        CHECK(rep1.runs[i].D_sup == rep2.runs[i].D_sup);
        REQUIRE(rep1.runs[i].fractions.size() == rep1.xs.size());
        for (std::size_t j = 0; j < rep1.xs.size(); ++j) {
            CHECK(rep1.runs[i].fractions[j] >= 0.0);
            CHECK(rep1.runs[i].fractions[j] <= 1.0);
            CHECK(rep1.runs[i].fractions[j] == rep2.runs[i].fractions[j]);
            if (j > 0) CHECK(rep1.runs[i].fractions[j] >= rep1.runs[i].fractions[j - 1]);
        }
    }

    std::ostringstream csv1, csv2;
    experiments::write_csv(csv1, rep1);
    experiments::write_csv(csv2, rep2);
    CHECK(csv1.str() == csv2.str());
    CHECK(csv1.str().rfind("run,x,fraction,reference\n", 0) == 0);
    CHECK(experiments::to_json(rep1).dump(2) == experiments::to_json(rep2).dump(2));
}
