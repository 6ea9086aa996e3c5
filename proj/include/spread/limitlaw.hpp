#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "spread/branching.hpp"
#include "spread/rng.hpp"
#include "spread/stats.hpp"

namespace spread::limitlaw {

/// Profile offset constants: C_d = d!/(d+1) (gossip), Ctilde_d = (d-1)!
/// (small-world). Exact in double for d <= 12.
inline double C_d(int d) {
    if (d < 1 || d > 12) throw std::invalid_argument("C_d defined for 1 <= d <= 12");
    return branching::factorial(d) / double(d + 1);
}

inline double Ctilde_d(int d) {
    if (d < 1 || d > 12) throw std::invalid_argument("Ctilde_d defined for 1 <= d <= 12");
    return branching::factorial(d - 1);
}

struct GridSpec {
    double s_min = -16.0;
    double s_max = 12.0;
    double ds = 0.005;
};

/// Solved coverage profile h_m on a log-theta grid: the CDF of -G - log W
/// for the r = m+1 branching limit, normalized so h(s) ~ e^s on the left.
struct LimitLaw {
    int m = 0;
    GridSpec grid;
    std::vector<double> h;
    std::vector<double> slope; // monotone-cubic interpolation slopes
    double tol = 0.0;
    int iterations = 0;
    double final_change = 0.0;
    double residual = 0.0;
};

namespace detail {

/// One application of the fixed-point map T[h](s) = 1 - exp(-I[h](s)) with
/// I[h](s) = int_0^inf x^m/m! h(s-x) dx. The grid part integrates the
/// piecewise-linear interpolant exactly via prefix moments of u^q * h(u);
/// below s_min the analytic e^u tail closes the integral:
/// tail(s) = e^{s_min} * sum_{k<=m} a^k/k!, a = s - s_min.
/// The interpolant's curvature bias, -(ds^2/12) J''(s) with
/// J'' = J_{m-2} (m>=2), h (m=1), h' (m=0), is subtracted; without it the
/// fixed point drifts along the translation mode by O(ds^2).
inline void apply_map(int m, const GridSpec& g, const std::vector<double>& h,
                      std::vector<double>& out) {
    const std::size_t n = h.size();
    const double fact_m = branching::factorial(m);
    // Prefix moments P_q(i) = int_{s_min}^{s_i} u^q h(u) du, q = 0..m.
    static thread_local std::vector<double> prefix;
    prefix.assign((m + 1) * n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        double a = g.s_min + double(i) * g.ds;
        double b = a + g.ds;
        double slope = (h[i + 1] - h[i]) / g.ds;
        double alpha = h[i] - a * slope;
        double pa = a, pb = b; // running powers a^{q+1}, b^{q+1}
        for (int q = 0; q <= m; ++q) {
            double pa2 = pa * a, pb2 = pb * b;
            double seg = alpha * (pb - pa) / double(q + 1) + slope * (pb2 - pa2) / double(q + 2);
            prefix[q * n + i + 1] = prefix[q * n + i] + seg;
            pa = pa2;
            pb = pb2;
        }
    }
    const double curv = g.ds * g.ds / 12.0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = g.s_min + double(i) * g.ds;
        double a = s - g.s_min;
        double tail = 0.0, apow = 1.0;
        for (int k = 0; k <= m; ++k) {
            tail += apow / branching::factorial(k);
            apow *= a;
        }
        tail *= std::exp(g.s_min);
        double integral = 0.0;
        double spow = 1.0; // s^{m-q} built from q = m downward
        for (int q = m; q >= 0; --q) {
            double sign = (q % 2 == 0) ? 1.0 : -1.0;
            integral += sign * branching::binom(m, q) * spow * prefix[q * n + i];
            spow *= s;
        }
        double bias;
        if (m == 0) {
            bias = (i == 0)       ? (h[1] - h[0]) / g.ds
                   : (i + 1 == n) ? (h[n - 1] - h[n - 2]) / g.ds
                                  : (h[i + 1] - h[i - 1]) / (2.0 * g.ds);
        } else if (m == 1) {
            bias = h[i];
        } else {
            double jd = 0.0, sp = 1.0;
            for (int q = m - 2; q >= 0; --q) {
                double sign = (q % 2 == 0) ? 1.0 : -1.0;
                jd += sign * branching::binom(m - 2, q) * sp * prefix[q * n + i];
                sp *= s;
            }
            bias = jd / branching::factorial(m - 2);
        }
        integral = integral / fact_m + tail - curv * bias;
        out[i] = 1.0 - std::exp(-std::max(integral, 0.0));
    }
}

inline void set_monotone_slopes(LimitLaw& law) {
    const std::size_t n = law.h.size();
    law.slope.assign(n, 0.0);
    if (n < 2) return;
    std::vector<double> delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) delta[i] = (law.h[i + 1] - law.h[i]) / law.grid.ds;
    law.slope[0] = delta[0];
    law.slope[n - 1] = delta[n - 2];
    for (std::size_t i = 1; i + 1 < n; ++i) {
        double d0 = delta[i - 1], d1 = delta[i];
        law.slope[i] = (d0 * d1 <= 0.0) ? 0.0 : 2.0 * d0 * d1 / (d0 + d1);
    }
}

} // namespace detail

struct SolveFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline LimitLaw solve_h(int m, GridSpec grid = {}, double tol = 1e-10, int max_iter = 10000) {
    if (m < 0 || m > 11) throw std::invalid_argument("integrand power m must be in [0,11]");
    if (!(std::exp(grid.s_min) <= 1e-6))
        throw std::invalid_argument("grid.s_min too large: need e^{s_min} <= 1e-6");
    if (!(grid.ds > 0.0 && grid.ds <= 0.01))
        throw std::invalid_argument("grid step must be in (0, 0.01]");
    if (!(tol >= 1e-12)) throw std::invalid_argument("tol must be at least 1e-12");
    if (!(grid.s_max > grid.s_min)) throw std::invalid_argument("empty grid");

    LimitLaw law;
    law.m = m;
    law.grid = grid;
    law.tol = tol;
    std::size_t n = static_cast<std::size_t>(std::round((grid.s_max - grid.s_min) / grid.ds)) + 1;
    law.grid.s_max = grid.s_min + double(n - 1) * grid.ds;
    law.h.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        law.h[i] = std::min(1.0, std::exp(grid.s_min + double(i) * grid.ds));

    std::vector<double> next(n);
    double change = 0.0;
    int it = 0;
    for (; it < max_iter; ++it) {
        detail::apply_map(m, law.grid, law.h, next);
        change = 0.0;
        for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(next[i] - law.h[i]));
        law.h.swap(next);
        if (change < tol) break;
    }
    law.iterations = it + 1;
    law.final_change = change;
    if (change >= tol)
        throw SolveFailure("solve_h did not converge: m=" + std::to_string(m) +
                           " iterations=" + std::to_string(max_iter) +
                           " last_change=" + std::to_string(change));
    detail::apply_map(m, law.grid, law.h, next);
    law.residual = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        law.residual = std::max(law.residual, std::abs(next[i] - law.h[i]));
    detail::set_monotone_slopes(law);
    return law;
}

/// Monotone-cubic interpolation inside the grid, e^x below, 1 above.
inline double eval_h(const LimitLaw& law, double x) {
    const auto& g = law.grid;
    if (x <= g.s_min) return std::min(std::exp(x), law.h.front());
    if (x >= g.s_max) return 1.0;
    double pos = (x - g.s_min) / g.ds;
    std::size_t i = std::min(static_cast<std::size_t>(pos), law.h.size() - 2);
    double u = (x - (g.s_min + double(i) * g.ds)) / g.ds;
    double h0 = law.h[i], h1 = law.h[i + 1];
    double m0 = law.slope[i] * g.ds, m1 = law.slope[i + 1] * g.ds;
    double u2 = u * u, u3 = u2 * u;
    return (2 * u3 - 3 * u2 + 1) * h0 + (u3 - 2 * u2 + u) * m0 + (-2 * u3 + 3 * u2) * h1 +
           (u3 - u2) * m1;
}

/// Laplace transform phi(theta) = E e^{-theta W} = 1 - h(log theta).
inline double phi(const LimitLaw& law, double theta) {
    if (theta < 0.0) throw std::invalid_argument("theta must be nonnegative");
    if (theta == 0.0) return 1.0;
    return 1.0 - eval_h(law, std::log(theta));
}

/// MC construction of the same law: samples of -G - log W with G standard
/// Gumbel and W drawn by the supplied sampler (r = m+1 branching limit).
template <typename SampleW>
stats::EmpiricalCdf gumbel_h_mc(int m, std::size_t n, Rng& rng, SampleW sample_w) {
    (void)m;
    if (n < 1000) throw std::invalid_argument("gumbel_h_mc needs n >= 1000");
    std::vector<double> xs;
    xs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        double g = stats::gumbel(rng);
        double w = sample_w(rng);
        xs.push_back(-g - std::log(w));
    }
    return stats::EmpiricalCdf(std::move(xs));
}

struct TailBounds {
    double lower = 1.0; // bound on P[W <= w]
    double upper = 1.0; // bound on P[W >= w]
};

inline TailBounds w_tail_bounds(const LimitLaw& law, double w) {
    if (!(w > 0.0)) throw std::invalid_argument("w must be positive");
    TailBounds b;
    b.upper = std::min(1.0, 1.0 / w);
    if (w < 1.0) {
        double c = (1.0 - phi(law, 1.0)) / branching::factorial(law.m + 1);
        double lg = std::log(1.0 / w);
        b.lower = std::min(1.0, M_E * std::exp(-c * std::pow(lg, law.m + 1)));
    }
    return b;
}

} // namespace spread::limitlaw
