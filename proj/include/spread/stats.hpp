#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "spread/rng.hpp"

namespace spread::stats {

struct Summary {
    std::size_t n = 0;
    double mean = 0.0;
    double sd = 0.0;
    double se = 0.0;
};

inline Summary summarize(const std::vector<double>& xs) {
    Summary s;
    s.n = xs.size();
    if (s.n == 0) return s;
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(s.n);
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    if (s.n > 1) s.sd = std::sqrt(ss / double(s.n - 1));
    s.se = s.n > 0 ? s.sd / std::sqrt(double(s.n)) : 0.0;
    return s;
}

inline double binomial_se(double p_hat, std::size_t n) {
    if (n == 0) return 0.0;
    return std::sqrt(std::max(p_hat * (1.0 - p_hat), 0.0) / double(n));
}

/// q-quantile of a sample (linear interpolation between order statistics).
inline double quantile(std::vector<double> xs, double q) {
    if (xs.empty()) throw std::invalid_argument("quantile of empty sample");
    std::sort(xs.begin(), xs.end());
    double pos = q * double(xs.size() - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, xs.size() - 1);
    double w = pos - double(lo);
    return (1.0 - w) * xs[lo] + w * xs[hi];
}

inline double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
    std::sort(xs.begin(), xs.end());
    std::size_t n = xs.size();
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double f = cdf(xs[i]);
        double lo = double(i) / double(n);
        double hi = double(i + 1) / double(n);
        d = std::max(d, std::max(std::abs(hi - f), std::abs(f - lo)));
    }
    return d;
}

/// Kolmogorov distribution survival: P[sup|B(t)| > x], x = sqrt(n)*D.
inline double kolmogorov_q(double x) {
    if (x <= 0.0) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 101; ++k) {
        double term = std::exp(-2.0 * double(k) * double(k) * x * x);
        sum += (k % 2 == 1 ? term : -term);
        if (term < 1e-16) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// Asymptotic KS p-value with Stephens' small-sample correction.
inline double ks_p_value(double d, std::size_t n) {
    double rn = std::sqrt(double(n));
    return kolmogorov_q(d * (rn + 0.12 + 0.11 / rn));
}

/// Two-sample KS p-value (asymptotic, effective sample size).
inline double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j])
            ++i;
        else
            ++j;
        double fa = double(i) / double(a.size());
        double fb = double(j) / double(b.size());
        d = std::max(d, std::abs(fa - fb));
    }
    double ne = double(a.size()) * double(b.size()) / double(a.size() + b.size());
    return kolmogorov_q(d * (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)));
}

/// Standard Gumbel draw (CDF exp(-exp(-x))).
inline double gumbel(Rng& rng) { return -std::log(rng.exponential()); }

inline double poisson_pmf(std::uint64_t k, double mu) {
    if (mu <= 0.0) return k == 0 ? 1.0 : 0.0;
    double log_p = -mu + double(k) * std::log(mu) - std::lgamma(double(k) + 1.0);
    return std::exp(log_p);
}

/// Exact total variation distance between the empirical law of nonnegative
/// integer counts and Poisson(mu). The empirical law has no mass beyond its
/// maximum, so the truncated sum plus the Poisson tail is the full distance.
inline double tv_to_poisson(const std::vector<std::uint64_t>& counts, double mu) {
    if (counts.empty()) return 0.0;
    std::uint64_t kmax = *std::max_element(counts.begin(), counts.end());
    std::vector<double> emp(kmax + 1, 0.0);
    for (auto c : counts) emp[c] += 1.0 / double(counts.size());
    double tv = 0.0;
    double poisson_mass = 0.0;
    for (std::uint64_t k = 0; k <= kmax; ++k) {
        double pk = poisson_pmf(k, mu);
        poisson_mass += pk;
        tv += std::abs(emp[k] - pk);
    }
    tv += std::max(1.0 - poisson_mass, 0.0);
    return 0.5 * tv;
}

/// Seeded bootstrap standard error of a statistic of a sample.
template <typename Stat>
double bootstrap_se(const std::vector<double>& xs, Stat stat, std::size_t resamples, Rng& rng) {
    if (xs.empty()) return 0.0;
    std::vector<double> vals;
    vals.reserve(resamples);
    std::vector<double> buf(xs.size());
    for (std::size_t b = 0; b < resamples; ++b) {
        for (auto& v : buf) v = xs[rng.below(xs.size())];
        vals.push_back(stat(buf));
    }
    return summarize(vals).sd;
}

/// Empirical CDF over a stored, sorted sample.
struct EmpiricalCdf {
    std::vector<double> sorted;

    explicit EmpiricalCdf(std::vector<double> xs) : sorted(std::move(xs)) {
        std::sort(sorted.begin(), sorted.end());
    }

    double operator()(double x) const {
        auto it = std::upper_bound(sorted.begin(), sorted.end(), x);
        return double(it - sorted.begin()) / double(sorted.size());
    }

    /// Sup distance to a continuous CDF, evaluated at the jump points.
    double sup_distance(const std::function<double(double)>& cdf) const {
        double d = 0.0;
        std::size_t n = sorted.size();
        for (std::size_t i = 0; i < n; ++i) {
            double f = cdf(sorted[i]);
            d = std::max(d, std::max(std::abs(double(i + 1) / double(n) - f),
                                     std::abs(f - double(i) / double(n))));
        }
        return d;
    }
};

} // namespace spread::stats
