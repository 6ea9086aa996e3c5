#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "spread/geometry.hpp"
#include "spread/rng.hpp"

namespace spread::branching {

enum class Kind { gossip, small_world };

inline std::string kind_name(Kind k) { return k == Kind::gossip ? "gossip" : "small-world"; }

inline Kind kind_from_name(const std::string& s) {
    if (s == "gossip") return Kind::gossip;
    if (s == "small-world" || s == "small_world") return Kind::small_world;
    throw std::invalid_argument("unknown process kind: " + s);
}

inline double factorial(int n) {
    double f = 1.0;
    for (int k = 2; k <= n; ++k) f *= k;
    return f;
}

/// Highest moment order supported (gossip r = d+1 with d <= 4, plus slack).
constexpr int max_r = 13;
using MomentBuf = std::array<double, max_r + 1>;

struct ProcessParams {
    Kind kind = Kind::gossip;
    double rho = 1.0;
    geometry::ManifoldSpec manifold;
    // Derived.
    int r = 2;
    double lambda0 = 1.0;
    double Lambda = 1.0;
};

inline ProcessParams make_params(Kind kind, double rho, geometry::ManifoldSpec manifold) {
    if (!(rho >= 0.0)) throw std::invalid_argument("rho must be nonnegative");
    ProcessParams p;
    p.kind = kind;
    p.rho = rho;
    int d = manifold.d;
    p.r = kind == Kind::gossip ? d + 1 : d;
    if (p.r < 1 || p.r > max_r) throw std::invalid_argument("unsupported moment order r");
    double base = factorial(d) * rho * manifold.vK;
    p.lambda0 = std::pow(base, 1.0 / p.r);
    p.Lambda = manifold.volume() * std::pow(p.lambda0, d) / manifold.vK;
    p.manifold = std::move(manifold);
    return p;
}

/// Moment vector of the branching process: M_l(t) = sum_j (t - tau_j)^l.
struct MomentState {
    double t = 0.0;
    std::vector<double> births;
    std::vector<double> M; // M_0..M_r
};

inline MomentState initial_state(const ProcessParams& p) {
    MomentState s;
    s.births = {0.0};
    s.M.assign(p.r + 1, 0.0);
    s.M[0] = 1.0;
    return s;
}

inline double binom(int n, int k) {
    double b = 1.0;
    for (int i = 1; i <= k; ++i) b = b * double(n - k + i) / double(i);
    return b;
}

/// Deterministic drift between events: M_l(t+dt) = sum_k C(l,k) dt^k M_{l-k}.
template <typename Buf> inline void shift_moments(Buf& M, int r, double dt) {
    std::array<double, max_r + 1> pw;
    pw[0] = 1.0;
    for (int k = 1; k <= r; ++k) pw[k] = pw[k - 1] * dt;
    for (int l = r; l >= 1; --l) {
        double acc = M[l];
        for (int k = 1; k <= l; ++k) acc += binom(l, k) * pw[k] * M[l - k];
        M[l] = acc;
    }
}

/// Cumulative birth intensity over a lookahead window as a polynomial in dt:
/// gossip int rho*vK*M_d = rho*vK/(d+1)*[M_{d+1}(t+dt) - M_{d+1}(t)],
/// small-world int rho*vK*d*M_{d-1} = rho*vK*[M_d(t+dt) - M_d(t)].
/// Both reduce to coefficients c_k = pref*C(r,k)*M_{r-k}, k = 1..r.
struct IntensityPoly {
    std::array<double, max_r + 1> c{}; // c[1..r]
    int r = 1;

    double eval(double x) const {
        double acc = 0.0;
        for (int k = r; k >= 1; --k) acc = (acc + c[k]) * x;
        return acc;
    }

    double derivative(double x) const {
        double acc = 0.0;
        for (int k = r; k >= 2; --k) acc = (acc + double(k) * c[k]) * x;
        return acc + c[1];
    }
};

template <typename Buf>
inline IntensityPoly intensity_poly(const ProcessParams& p, const Buf& M) {
    IntensityPoly poly;
    poly.r = p.r;
    double pref = p.kind == Kind::gossip ? p.rho * p.manifold.vK / double(p.manifold.d + 1)
                                         : p.rho * p.manifold.vK;
    for (int k = 1; k <= p.r; ++k) poly.c[k] = pref * binom(p.r, k) * M[p.r - k];
    return poly;
}

inline double cumulative_intensity(const ProcessParams& p, const MomentState& s, double dt) {
    if (dt < 0.0) throw std::invalid_argument("dt must be nonnegative");
    return intensity_poly(p, s.M).eval(dt);
}

/// Solves poly(x) = target for the increasing polynomial with nonnegative
/// coefficients. Closed form for pure powers; otherwise Newton from the
/// single-island upper bracket (convexity keeps iterates above the root).
inline double invert_intensity(const IntensityPoly& poly, double target) {
    if (target <= 0.0) return 0.0;
    int r = poly.r;
    if (!(poly.c[r] > 0.0)) throw std::runtime_error("degenerate intensity polynomial");
    double lower_mass = 0.0;
    for (int k = 1; k < r; ++k) lower_mass += poly.c[k];
    double hi = std::pow(target / poly.c[r], 1.0 / r);
    if (lower_mass == 0.0 || r == 1) return r == 1 ? target / poly.c[1] : hi;
    double x = hi;
    for (int it = 0; it < 200; ++it) {
        double f = poly.eval(x) - target;
        if (std::abs(f) <= 1e-12 * target) break;
        double fp = poly.derivative(x);
        double step = f / fp;
        x -= step;
        if (std::abs(step) <= 1e-16 * x) break;
    }
    return x;
}

inline double next_event_delay(const ProcessParams& p, const MomentState& s, Rng& rng) {
    if (s.M[0] < 1.0) throw std::invalid_argument("state must contain at least one island");
    return invert_intensity(intensity_poly(p, s.M), rng.exponential());
}

inline void step(const ProcessParams& p, MomentState& s, Rng& rng) {
    double dt = next_event_delay(p, s, rng);
    shift_moments(s.M, p.r, dt);
    s.t += dt;
    s.births.push_back(s.t);
    s.M[0] += 1.0;
}

struct HVector {
    std::vector<double> H; // H_0..H_r
    double h_hat = 0.0;    // H_0 - H_r
};

inline HVector H_vector(const ProcessParams& p, const MomentState& s) {
    HVector out;
    out.H.resize(p.r + 1);
    double pw = 1.0;
    for (int i = 0; i <= p.r; ++i) {
        out.H[i] = s.M[i] * pw / factorial(i);
        pw *= p.lambda0;
    }
    out.h_hat = out.H[0] - out.H[p.r];
    return out;
}

struct WStats {
    std::vector<double> W_vec; // r*e^{-lambda0 t}*H_i, i = 1..r
    double W_star = 0.0;       // e^{-lambda0 t} * sum_{i=1..r} H_i
    double W_tilde = 0.0;      // e^{-lambda0 t} * sum_{i=0..r-1} H_i (martingale)
};

inline WStats W_statistics(const ProcessParams& p, const MomentState& s) {
    HVector hv = H_vector(p, s);
    double disc = std::exp(-p.lambda0 * s.t);
    WStats out;
    out.W_vec.resize(p.r);
    for (int i = 1; i <= p.r; ++i) {
        out.W_vec[i - 1] = double(p.r) * disc * hv.H[i];
        out.W_star += disc * hv.H[i];
        out.W_tilde += disc * hv.H[i - 1];
    }
    return out;
}

struct EventCapExceeded : std::runtime_error {
    explicit EventCapExceeded(std::uint64_t cap)
        : std::runtime_error("event cap exceeded (" + std::to_string(cap) + " events)") {}
    explicit EventCapExceeded(const std::string& what) : std::runtime_error(what) {}
};

constexpr std::uint64_t default_event_cap = 10'000'000;

/// Completed run up to T: birth times plus the cumulative intensity consumed
/// at each birth (the jump locations of the driving unit-rate Poisson path).
struct Trajectory {
    ProcessParams params;
    double T = 0.0;
    std::vector<double> births;
    std::vector<double> birth_u;
};

inline Trajectory simulate_to(const ProcessParams& p, double T, Rng& rng,
                              std::uint64_t event_cap = default_event_cap) {
    if (!(T >= 0.0)) throw std::invalid_argument("horizon must be nonnegative");
    Trajectory traj;
    traj.params = p;
    traj.T = T;
    traj.births = {0.0};
    traj.birth_u = {0.0};
    MomentBuf M{};
    M[0] = 1.0;
    double t = 0.0;
    double u = 0.0;
    for (;;) {
        double E = rng.exponential();
        double dt = invert_intensity(intensity_poly(p, M), E);
        if (t + dt >= T) break;
        shift_moments(M, p.r, dt);
        t += dt;
        u += E;
        M[0] += 1.0;
        traj.births.push_back(t);
        traj.birth_u.push_back(u);
        if (traj.births.size() > event_cap) throw EventCapExceeded(event_cap);
    }
    return traj;
}

/// Exact state at time s <= T, recomputed from the recorded births.
inline MomentState state_at(const Trajectory& traj, double s) {
    if (s < 0.0 || s > traj.T) throw std::invalid_argument("time outside trajectory");
    const int r = traj.params.r;
    MomentState st;
    st.t = s;
    st.M.assign(r + 1, 0.0);
    for (double tau : traj.births) {
        if (tau > s) break;
        st.births.push_back(tau);
        double age = s - tau;
        double pw = 1.0;
        for (int l = 0; l <= r; ++l) {
            st.M[l] += pw;
            pw *= age;
        }
    }
    return st;
}

/// W estimate: W_tilde at T = log(B)/lambda0. Bias is O(B^{-beta_r}) and is
/// documented, not corrected.
inline double sample_W(const ProcessParams& p, double B, Rng& rng,
                       std::uint64_t event_cap = default_event_cap) {
    if (!(B > 1.0)) throw std::invalid_argument("budget B must exceed 1");
    double T = std::log(B) / p.lambda0;
    MomentBuf M{};
    M[0] = 1.0;
    double t = 0.0;
    std::uint64_t events = 0;
    for (;;) {
        double E = rng.exponential();
        double dt = invert_intensity(intensity_poly(p, M), E);
        if (t + dt >= T) {
            shift_moments(M, p.r, T - t);
            break;
        }
        shift_moments(M, p.r, dt);
        t += dt;
        M[0] += 1.0;
        if (++events > event_cap) throw EventCapExceeded(event_cap);
    }
    double acc = 0.0;
    double pw = 1.0;
    for (int i = 0; i <= p.r - 1; ++i) {
        acc += M[i] * pw / factorial(i);
        pw *= p.lambda0;
    }
    return acc / B; // e^{-lambda0 T} = 1/B
}

/// First time H_r reaches K, with the within-interval crossing solved in
/// closed form between events.
inline double hitting_time_tauK(const ProcessParams& p, double K, Rng& rng,
                                std::uint64_t event_cap = default_event_cap) {
    if (!(K >= 1.0)) throw std::invalid_argument("K must be at least 1");
    const int r = p.r;
    double target = K * factorial(r) / std::pow(p.lambda0, r);
    MomentBuf M{};
    M[0] = 1.0;
    double t = 0.0;
    std::uint64_t events = 0;
    for (;;) {
        if (M[r] >= target) return t;
        // M_r(t+x) - M_r(t) is an increasing polynomial with the same
        // structure as the intensity; reuse the inverter for the crossing.
        IntensityPoly cross;
        cross.r = r;
        for (int k = 1; k <= r; ++k) cross.c[k] = binom(r, k) * M[r - k];
        double x_cross = invert_intensity(cross, target - M[r]);
        double E = rng.exponential();
        double dt = invert_intensity(intensity_poly(p, M), E);
        if (x_cross <= dt) return t + x_cross;
        shift_moments(M, r, dt);
        t += dt;
        M[0] += 1.0;
        if (++events > event_cap) throw EventCapExceeded(event_cap);
    }
}

// Constants attached to the growth diagnostics.
inline double const_Ca(int r) { return 3.0 * std::exp(std::pow(factorial(r), 1.0 / r)); }
inline double const_theta(int r) { return const_Ca(r) * std::exp(1.0 / 80.0); }
inline double const_cc(int r) {
    return 2.0 * std::pow(factorial(r), 1.0 / r) / std::log(6.0 / 5.0);
}
inline double eps_K(double K) { return 5.0 * std::pow(K, -1.0 / 3.0); }
inline double beta_r(int r, double K) {
    if (r <= 6) return 0.5 * (1.0 - eps_K(K));
    return 1.0 - std::cos(2.0 * M_PI / double(r));
}
/// Diagnostic level preset K(Lambda) = (40 log Lambda)^3.
inline double k_preset(double Lambda) { return std::pow(40.0 * std::log(Lambda), 3.0); }

struct GrowthDiagnostics {
    double K = 1.0;
    double eps = 0.0;
    double beta = 0.0;
    double theta = 0.0;
    double c_c = 0.0;
    bool a1 = false; // e^{-lambda0 s} ||H(s)|| <= theta*K
    bool a2 = false; // H_r(s) >= K
    bool a3 = false; // weighted sup |Z(u) - u| <= K^{(1-eps)/2} on [0, H_r(s)]
    bool all = false;
};

/// Evaluates the three growth-control events at time s from a completed run.
/// Z is known exactly: it jumps at the recorded cumulative-intensity values,
/// and between jumps the compensator is linear, so the weighted supremum is
/// attained at jump endpoints or at the u = 1 kink.
inline GrowthDiagnostics diagnostics_at(const ProcessParams& p, const Trajectory& traj,
                                        double s, double K) {
    GrowthDiagnostics g;
    g.K = K;
    g.eps = eps_K(K);
    g.beta = beta_r(p.r, K);
    g.theta = const_theta(p.r);
    g.c_c = const_cc(p.r);

    MomentState st = state_at(traj, s);
    HVector hv = H_vector(p, st);
    double h_norm = 0.0;
    for (int i = 1; i <= p.r; ++i) h_norm = std::max(h_norm, hv.H[i]);
    g.a1 = std::exp(-p.lambda0 * s) * h_norm <= g.theta * K;
    double cap = hv.H[p.r];
    g.a2 = cap >= K;

    double exponent = -(1.0 + g.eps) / 2.0;
    auto weight = [&](double u) { return std::pow(std::max(u, 1.0), exponent); };
    double bound = std::pow(K, (1.0 - g.eps) / 2.0);
    double sup = 0.0;
    std::size_t jumps = 0; // births after time zero, i.e. jumps of Z
    for (std::size_t j = 1; j < traj.births.size() && traj.births[j] <= s; ++j) {
        double u = traj.birth_u[j];
        if (u > cap) break;
        double z_left = double(jumps);
        double z_right = double(jumps + 1);
        sup = std::max(sup, weight(u) * std::abs(z_left - u));
        sup = std::max(sup, weight(u) * std::abs(z_right - u));
        ++jumps;
    }
    double z_end = double(jumps);
    sup = std::max(sup, weight(cap) * std::abs(z_end - cap));
    if (cap >= 1.0) {
        double z_at_1 = 0.0;
        for (std::size_t j = 1; j < traj.births.size() && traj.births[j] <= s; ++j)
            if (traj.birth_u[j] <= 1.0) z_at_1 += 1.0;
        sup = std::max(sup, std::abs(z_at_1 - 1.0));
    }
    g.a3 = sup <= bound;
    g.all = g.a1 && g.a2 && g.a3;
    return g;
}

} // namespace spread::branching
