#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "spread/branching.hpp"
#include "spread/geometry.hpp"

namespace spread::config {

using nlohmann::json;

struct ExperimentConfig {
    branching::Kind kind = branching::Kind::gossip;
    int d = 1;
    geometry::Topology topology = geometry::Topology::torus;
    geometry::BallShape ball_shape = geometry::BallShape::round;
    double ball_scale = 1.0;
    double vK = -1.0;           // optional declared ball volume, cross-checked
    double Lambda = 1e4;        // size knob; rho and sides are solved unless given
    double rho = -1.0;          // explicit contact density (overrides the knob)
    std::vector<double> sides;  // explicit sides (override the knob)
    double alpha = 0.49;        // early-estimation fraction, in (0, 1/2); near the
                                // upper end so the early window carries enough births
    int runs = 100;
    std::size_t probes = 200;
    std::uint64_t seed = 1;
    double x_min = -4.0;
    double x_max = 4.0;
    double x_step = 0.25;
    double budget_B = 1000.0;  // branching budget for W sampling
    std::size_t w_pairs = 10000;
    int islands_n = 20;
    std::size_t placements = 10000;
    double age_span = -1.0;      // island age span; < 0 means logLambda/(2 lambda0)
    double coverage_slack = 8.0; // pilot constant C in the coverage budget
    double path_tol = 0.05;
    double sw_path_tol = 0.07;
    double distance_tol = 0.05;
    std::string tolerance_note = "tolerances pilot-calibrated at desk scale";
    std::string out;

    std::vector<double> x_points() const {
        if (!(x_step > 0.0) || !(x_max >= x_min)) throw std::invalid_argument("bad x grid");
        std::size_t n = static_cast<std::size_t>(std::round((x_max - x_min) / x_step)) + 1;
        std::vector<double> xs(n);
        for (std::size_t i = 0; i < n; ++i) xs[i] = x_min + double(i) * x_step;
        return xs;
    }
};

/// Fully derived quantities; everything here is a pure function of the
/// config, reproducible to 1e-12.
struct Resolved {
    branching::ProcessParams params;
    double log_Lambda = 0.0;
    double s_lambda = 0.0;                    // (alpha/2) * log(Lambda) / lambda0
    double t_full(double x) const { return (log_Lambda + x) / params.lambda0; }
    double t_half(double x) const { return 0.5 * (log_Lambda + x) / params.lambda0; }
};

inline Resolved resolve(const ExperimentConfig& c) {
    if (!(c.alpha > 0.0 && c.alpha < 0.5))
        throw std::invalid_argument("alpha must lie in (0, 1/2)");
    if (c.runs < 1) throw std::invalid_argument("runs must be positive");
    double vK = geometry::unit_ball_volume(c.ball_shape, c.d) * std::pow(c.ball_scale, c.d);
    std::vector<double> sides = c.sides;
    if (sides.empty()) {
        if (!(c.Lambda > 1.0)) throw std::invalid_argument("Lambda must exceed 1");
        double L = c.Lambda * vK; // lambda0 = 1 normalization
        sides.assign(std::size_t(c.d), std::pow(L, 1.0 / c.d));
    }
    double rho = c.rho;
    if (!(rho > 0.0)) rho = 1.0 / (branching::factorial(c.d) * vK);
    auto manifold =
        geometry::make_manifold(c.d, sides, c.topology, c.ball_shape, c.ball_scale, c.vK);
    Resolved r;
    r.params = branching::make_params(c.kind, rho, manifold);
    r.log_Lambda = std::log(r.params.Lambda);
    r.s_lambda = 0.5 * c.alpha * r.log_Lambda / r.params.lambda0;
    return r;
}

/// N x N torus with round balls B(P, s/sqrt(2 pi)), so vK = 1/2 exactly,
/// rho = N^{-a}; then lambda0 = N^{-a/3} and Lambda = 2 N^{2(1-a/3)}.
inline ExperimentConfig cd_preset(int N, double a) {
    if (!(a < 3.0)) throw std::invalid_argument("preset requires exponent a < 3");
    if (N < 2) throw std::invalid_argument("preset requires N >= 2");
    ExperimentConfig c;
    c.kind = branching::Kind::gossip;
    c.d = 2;
    c.topology = geometry::Topology::torus;
    c.ball_shape = geometry::BallShape::round;
    c.ball_scale = 1.0 / std::sqrt(2.0 * M_PI);
    c.vK = 0.5;
    c.sides = {double(N), double(N)};
    c.rho = std::pow(double(N), -a);
    c.Lambda = 2.0 * std::pow(double(N), 2.0 * (1.0 - a / 3.0));
    c.runs = 20;
    c.probes = 500;
    return c;
}

// ---------------------------------------------------------------------------
// Serialization. JSON is the native format; a small TOML subset (flat or
// [section] grouped key = value lines, JSON-compatible scalars and arrays)
// is translated into the same JSON document.
// ---------------------------------------------------------------------------

inline json config_to_json(const ExperimentConfig& c) {
    json j;
    j["kind"] = branching::kind_name(c.kind);
    j["d"] = c.d;
    j["topology"] = geometry::topology_name(c.topology);
    j["ball_shape"] = geometry::ball_shape_name(c.ball_shape);
    j["ball_scale"] = c.ball_scale;
    if (c.vK > 0.0) j["vK"] = c.vK;
    j["Lambda"] = c.Lambda;
    if (c.rho > 0.0) j["rho"] = c.rho;
    if (!c.sides.empty()) j["sides"] = c.sides;
    j["alpha"] = c.alpha;
    j["runs"] = c.runs;
    j["probes"] = c.probes;
    j["seed"] = c.seed;
    j["x_min"] = c.x_min;
    j["x_max"] = c.x_max;
    j["x_step"] = c.x_step;
    j["budget_B"] = c.budget_B;
    j["w_pairs"] = c.w_pairs;
    j["islands_n"] = c.islands_n;
    j["placements"] = c.placements;
    if (c.age_span > 0.0) j["age_span"] = c.age_span;
    j["coverage_slack"] = c.coverage_slack;
    j["path_tol"] = c.path_tol;
    j["sw_path_tol"] = c.sw_path_tol;
    j["distance_tol"] = c.distance_tol;
    j["tolerance_note"] = c.tolerance_note;
    if (!c.out.empty()) j["out"] = c.out;
    return j;
}

inline ExperimentConfig config_from_json(const json& in) {
    json flat = json::object();
    for (auto it = in.begin(); it != in.end(); ++it) {
        if (it.value().is_object() && it.key() != "sides") {
            for (auto jt = it.value().begin(); jt != it.value().end(); ++jt)
                flat[jt.key()] = jt.value();
        } else {
            flat[it.key()] = it.value();
        }
    }
    static const std::vector<std::string> known = {
        "kind",      "d",          "topology",       "ball_shape", "ball_scale",
        "vK",        "Lambda",     "rho",            "sides",      "alpha",
        "runs",      "probes",     "seed",           "x_min",      "x_max",
        "x_step",    "budget_B",   "w_pairs",        "islands_n",  "placements",
        "age_span",  "coverage_slack", "path_tol",   "sw_path_tol",
        "distance_tol", "tolerance_note", "out"};
    for (auto it = flat.begin(); it != flat.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw std::invalid_argument("unknown config key: " + it.key());
    ExperimentConfig c;
    if (flat.contains("kind")) c.kind = branching::kind_from_name(flat["kind"].get<std::string>());
    c.d = flat.value("d", c.d);
    if (flat.contains("topology"))
        c.topology = geometry::topology_from_name(flat["topology"].get<std::string>());
    if (flat.contains("ball_shape"))
        c.ball_shape = geometry::ball_shape_from_name(flat["ball_shape"].get<std::string>());
    c.ball_scale = flat.value("ball_scale", c.ball_scale);
    c.vK = flat.value("vK", c.vK);
    c.Lambda = flat.value("Lambda", c.Lambda);
    c.rho = flat.value("rho", c.rho);
    if (flat.contains("sides")) c.sides = flat["sides"].get<std::vector<double>>();
    c.alpha = flat.value("alpha", c.alpha);
    c.runs = flat.value("runs", c.runs);
    c.probes = flat.value("probes", c.probes);
    c.seed = flat.value("seed", c.seed);
    c.x_min = flat.value("x_min", c.x_min);
    c.x_max = flat.value("x_max", c.x_max);
    c.x_step = flat.value("x_step", c.x_step);
    c.budget_B = flat.value("budget_B", c.budget_B);
    c.w_pairs = flat.value("w_pairs", c.w_pairs);
    c.islands_n = flat.value("islands_n", c.islands_n);
    c.placements = flat.value("placements", c.placements);
    c.age_span = flat.value("age_span", c.age_span);
    c.coverage_slack = flat.value("coverage_slack", c.coverage_slack);
    c.path_tol = flat.value("path_tol", c.path_tol);
    c.sw_path_tol = flat.value("sw_path_tol", c.sw_path_tol);
    c.distance_tol = flat.value("distance_tol", c.distance_tol);
    c.tolerance_note = flat.value("tolerance_note", c.tolerance_note);
    c.out = flat.value("out", c.out);
    return c;
}

namespace detail {

inline std::string strip_toml_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (ch == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
        if (ch == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace detail

/// Minimal TOML reader covering what the config needs: comments, [section]
/// headers (one level), and key = value lines whose values are already
/// JSON-compatible (strings, numbers, booleans, flat arrays).
inline json toml_to_json(std::istream& in) {
    json root = json::object();
    json* cur = &root;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = detail::trim(detail::strip_toml_comment(line));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') throw std::invalid_argument("bad section at line " + std::to_string(lineno));
            std::string name = detail::trim(s.substr(1, s.size() - 2));
            if (name.empty() || name.front() == '[')
                throw std::invalid_argument("unsupported section at line " + std::to_string(lineno));
            root[name] = json::object();
            cur = &root[name];
            continue;
        }
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("expected key = value at line " + std::to_string(lineno));
        std::string key = detail::trim(s.substr(0, eq));
        std::string val = detail::trim(s.substr(eq + 1));
        if (key.empty() || val.empty())
            throw std::invalid_argument("empty key or value at line " + std::to_string(lineno));
        try {
            (*cur)[key] = json::parse(val);
        } catch (const json::exception&) {
            throw std::invalid_argument("unsupported value at line " + std::to_string(lineno) +
                                        ": " + val);
        }
    }
    return root;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    std::size_t first = text.find_first_not_of(" \t\r\n");
    bool looks_json = first != std::string::npos && text[first] == '{';
    bool ext_toml = path.size() > 5 && path.substr(path.size() - 5) == ".toml";
    json j;
    if (looks_json && !ext_toml) {
        j = json::parse(text);
    } else {
        std::istringstream is(text);
        j = toml_to_json(is);
    }
    return config_from_json(j);
}

} // namespace spread::config
