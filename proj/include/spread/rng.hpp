#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace spread {

/// 64-bit mixer used for seed derivation (Vigna's splitmix64 step).
inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Random stream with code-defined sampling layers.
///
/// The bit engine is std::mt19937_64, but all real-valued draws are produced
/// by explicit inverse-CDF / polar constructions here, so that a (config,
/// seed) pair pins the sampled sequence to this code and not to the standard
/// library's unspecified distribution algorithms.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(mix_seed(seed)) {}

    /// Stream for run `run_index` of an ensemble with the given master seed.
    static Rng for_run(std::uint64_t master_seed, std::uint64_t run_index) {
        std::uint64_t s = master_seed;
        (void)splitmix64(s);
        s ^= 0x632be59bd9b4e019ull * (run_index + 1);
        std::uint64_t derived = splitmix64(s);
        return Rng(derived);
    }

    std::uint64_t bits() { return eng_(); }

    /// Uniform on the open interval (0,1).
    double uniform() {
        return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform_in(double a, double b) { return a + (b - a) * uniform(); }

    /// Exp(1) by inversion.
    double exponential() { return -std::log(uniform()); }

    /// Standard normal, Marsaglia polar method with one cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    /// Uniform integer in [0, n), n >= 1. Rejection keeps it unbiased.
    std::uint64_t below(std::uint64_t n) {
        std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = eng_();
            if (r >= threshold) return r % n;
        }
    }

  private:
    static std::uint64_t mix_seed(std::uint64_t seed) {
        std::uint64_t s = seed;
        return splitmix64(s);
    }

    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace spread
