#pragma once

// Independent reference computations for the test suite. Everything in this
// header is written directly against the plain geometric/probabilistic
// definitions and shares no code paths with the library under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace oracle {

struct Arc {
    double lo = 0.0;
    double hi = 0.0; // lo <= hi, both in [0, L]; degenerate arcs kept
};

inline double wrap01(double x, double L) {
    double y = std::fmod(x, L);
    if (y < 0.0) y += L;
    return y;
}

/// Disjoint sorted arc list of the union of [c_i - r_i, c_i + r_i] on a
/// circle of circumference L. Wrapped arcs are split at 0. Touching arcs
/// merge; degenerate (zero radius) arcs are kept as points so that the gap
/// structure they induce is preserved.
inline std::vector<Arc> merged_arcs(const std::vector<double>& centers,
                                    const std::vector<double>& radii, double L) {
    if (centers.size() != radii.size()) throw std::invalid_argument("size mismatch");
    std::vector<Arc> raw;
    for (std::size_t i = 0; i < centers.size(); ++i) {
        double r = radii[i];
        if (r < 0.0) continue;
        if (2.0 * r >= L) return {{0.0, L}};
        double lo = wrap01(centers[i] - r, L);
        double hi = lo + 2.0 * r;
        if (hi <= L) {
            raw.push_back({lo, hi});
        } else {
            raw.push_back({lo, L});
            raw.push_back({0.0, hi - L});
        }
    }
    if (raw.empty()) return {};
    std::sort(raw.begin(), raw.end(), [](const Arc& a, const Arc& b) {
        return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi);
    });
    std::vector<Arc> out;
    out.push_back(raw[0]);
    for (std::size_t i = 1; i < raw.size(); ++i) {
        if (raw[i].lo <= out.back().hi)
            out.back().hi = std::max(out.back().hi, raw[i].hi);
        else
            out.push_back(raw[i]);
    }
    // the two pieces of one wrapped arc may rejoin across 0
    if (out.size() > 1 && out.front().lo == 0.0 && out.back().hi == L) {
        out.front().lo = out.back().lo - L;
        out.pop_back();
    }
    return out;
}

inline double union_length(const std::vector<double>& centers, const std::vector<double>& radii,
                           double L) {
    double s = 0.0;
    for (const Arc& a : merged_arcs(centers, radii, L)) s += a.hi - a.lo;
    return std::min(s, L);
}

/// Lengths of the complement intervals between consecutive arcs.
inline std::vector<double> gap_lengths(const std::vector<double>& centers,
                                       const std::vector<double>& radii, double L) {
    auto arcs = merged_arcs(centers, radii, L);
    if (arcs.empty()) return {L};
    std::vector<double> gaps;
    for (std::size_t i = 0; i + 1 < arcs.size(); ++i) gaps.push_back(arcs[i + 1].lo - arcs[i].hi);
    double back = (arcs.front().lo + L) - arcs.back().hi;
    if (back > 0.0 || arcs.size() == 1) gaps.push_back(back);
    double tot = 0.0;
    for (const Arc& a : arcs) tot += a.hi - a.lo;
    for (double& g : gaps) g = std::max(g, 0.0);
    double gsum = 0.0;
    for (double g : gaps) gsum += g;
    if (std::abs(tot + gsum - L) > 1e-9 * L) throw std::logic_error("gap bookkeeping broke");
    return gaps;
}

/// Exact integral of the union length over [a, a + delta] when no island is
/// born inside the interval: every gap shrinks at rate 2*scale until it
/// closes, so int max(0, g - 2*scale*u) du has the closed form below.
inline double exposure_integral(const std::vector<double>& gaps_at_a, double scale, double L,
                                double delta) {
    double shrink = 2.0 * scale;
    double lost = 0.0;
    for (double g : gaps_at_a) {
        double u = std::min(delta, g / shrink);
        lost += g * u - 0.5 * shrink * u * u;
    }
    return L * delta - lost;
}

/// Per-event compensator increments for a d=1 run on a circle: the k-th entry
/// is rho * int_{t_{k-1}}^{t_k} |union(t)| dt over consecutive accepted-event
/// times (t_0 = first entry's predecessor is time 0). Island k's arcs enter
/// the gap structure only for intervals starting at or after its birth.
inline std::vector<double> compensator_increments(const std::vector<double>& centers,
                                                  const std::vector<double>& births,
                                                  const std::vector<double>& accepted,
                                                  double rho, double scale, double L) {
    std::vector<double> out;
    double prev = 0.0;
    for (double t : accepted) {
        std::vector<double> cs, rs;
        for (std::size_t i = 0; i < centers.size(); ++i)
            if (births[i] <= prev) {
                cs.push_back(centers[i]);
                rs.push_back(scale * (prev - births[i]));
            }
        auto gaps = gap_lengths(cs, rs, L);
        out.push_back(rho * exposure_integral(gaps, scale, L, t - prev));
        prev = t;
    }
    return out;
}

/// Coverage time of a fixed island set on a circle: max over x of
/// min_i (birth_i + dist(x, c_i)/scale). The maximizer sits at a crossing of
/// two cones (or a cone apex), so enumerate all pairwise crossings over the
/// unwrapped center copies and evaluate the full envelope at each candidate.
inline double cover_time_bruteforce(const std::vector<double>& centers,
                                    const std::vector<double>& births, double scale, double L) {
    std::size_t n = centers.size();
    if (n == 0) throw std::invalid_argument("need at least one island");
    auto envelope = [&](double x) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            double d = std::abs(wrap01(x - centers[i], L));
            d = std::min(d, L - d);
            best = std::min(best, births[i] + d / scale);
        }
        return best;
    };
    std::vector<double> candidates;
    for (std::size_t i = 0; i < n; ++i) {
        candidates.push_back(wrap01(centers[i], L));
        candidates.push_back(wrap01(centers[i] + 0.5 * L, L));
        for (std::size_t j = i + 1; j < n; ++j)
            for (int shift = -1; shift <= 1; ++shift) {
                double a = centers[i], b = centers[j] + shift * L;
                // either island may carry the rising branch at the crossing
                for (double sgn : {1.0, -1.0}) {
                    double x = 0.5 * (a + b) + sgn * 0.5 * scale * (births[j] - births[i]);
                    candidates.push_back(wrap01(x, L));
                    candidates.push_back(wrap01(x + 0.5 * L, L));
                }
            }
    }
    double worst = 0.0;
    for (double x : candidates) worst = std::max(worst, envelope(x));
    return worst;
}

/// Simpson quadrature of F(s) = int_0^inf x^m/m! f(s - x) dx for a callable f
/// that decays like e^u on the left; the domain is cut at s - depth.
template <typename F>
double left_moment_integral(int m, double s, F f, double depth = 60.0, int steps = 60000) {
    double fact = 1.0;
    for (int k = 2; k <= m; ++k) fact *= k;
    double a = s - depth, h = depth / steps;
    auto g = [&](double u) { return std::pow(s - u, double(m)) / fact * f(u); };
    double acc = g(a) + g(s);
    for (int k = 1; k < steps; ++k) acc += g(a + k * h) * (k % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

} // namespace oracle
