#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spread/branching.hpp"
#include "spread/geometry.hpp"
#include "spread/rng.hpp"
#include "spread/stats.hpp"

namespace spread::spatial {

using branching::EventCapExceeded;
using branching::Kind;
using geometry::Island;
using geometry::ManifoldSpec;
using geometry::Point;

enum class Disposition {
    rejected_owner,
    rejected_outside,
    accepted_new_island,
    accepted_mark_covered,
};

inline const char* disposition_name(Disposition d) {
    switch (d) {
        case Disposition::rejected_owner: return "rejected_owner";
        case Disposition::rejected_outside: return "rejected_outside";
        case Disposition::accepted_new_island: return "accepted_new_island";
        case Disposition::accepted_mark_covered: return "accepted_mark_covered";
    }
    return "?";
}

template <int D> struct EventRecord {
    double t = 0.0;
    int source = -1;
    Point<D> loc{};
    Point<D> mark{};
    bool has_mark = false;
    Disposition disposition = Disposition::rejected_owner;
};

struct SimOptions {
    std::size_t n_probes = 0;
    bool record_log = false;
    std::uint64_t event_cap = branching::default_event_cap;
    bool stop_when_covered = false;
};

struct CoverageIncomplete : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline double ipow(double x, int p) {
    double r = 1.0;
    for (int k = 0; k < p; ++k) r *= x;
    return r;
}

/// Prefix-sum tree supporting append, used for source selection by weight.
class Fenwick {
  public:
    void push(double w) {
        std::size_t i = tree_.size() + 1;
        double s = w;
        std::size_t j = i - 1;
        std::size_t stop = i - (i & (~i + 1));
        while (j > stop) {
            s += tree_[j - 1];
            j -= j & (~j + 1);
        }
        tree_.push_back(s);
        total_ += w;
    }
    double total() const { return total_; }
    std::size_t size() const { return tree_.size(); }
    // Smallest index whose prefix sum exceeds target.
    std::size_t sample(double target) const {
        std::size_t pos = 0;
        std::size_t mask = std::size_t(1) << (63 - __builtin_clzll(tree_.size() | 1));
        while (mask) {
            std::size_t next = pos + mask;
            if (next <= tree_.size() && tree_[next - 1] < target) {
                pos = next;
                target -= tree_[next - 1];
            }
            mask >>= 1;
        }
        return std::min(pos, tree_.size() - 1);
    }

  private:
    std::vector<double> tree_;
    double total_ = 0.0;
};

/// Uniform bucket grid over C. Bucket width >= the largest coordinate reach
/// of any ball within the horizon, so membership scans only need the 3^D
/// neighborhood. Stays inactive when the domain is too small for that.
template <int D> class CellGrid {
  public:
    void init(const ManifoldSpec& spec, double reach) {
        torus_ = spec.topology == geometry::Topology::torus;
        double total = 1.0;
        for (int k = 0; k < D; ++k) {
            int n = reach > 0.0 ? static_cast<int>(spec.sides[k] / reach) : 0;
            dims_[k] = n;
            total *= std::max(1, n);
        }
        const double cap = double(1 << 20);
        if (total > cap) {
            double shrink = std::pow(total / cap, 1.0 / D);
            for (int k = 0; k < D; ++k) dims_[k] = static_cast<int>(dims_[k] / shrink);
        }
        std::size_t cells = 1;
        for (int k = 0; k < D; ++k) {
            if (dims_[k] < 4) {
                active_ = false;
                return;
            }
            width_[k] = spec.sides[k] / dims_[k];
            cells *= std::size_t(dims_[k]);
        }
        cells_.assign(cells, {});
        active_ = true;
    }
    bool active() const { return active_; }
    void insert(const Point<D>& p, int id) { cells_[cell_of(p)].push_back(id); }
    // Calls f(id) for islands in the 3^D neighborhood of q, ascending id per
    // cell; stops early (returning true) when f returns true.
    template <typename F> bool scan(const Point<D>& q, F&& f) const {
        std::array<int, D> home;
        for (int k = 0; k < D; ++k) {
            int c = static_cast<int>(q[k] / width_[k]);
            home[k] = std::clamp(c, 0, dims_[k] - 1);
        }
        std::array<int, D> off{};
        off.fill(-1);
        while (true) {
            std::size_t idx = 0;
            bool valid = true;
            for (int k = 0; k < D; ++k) {
                int c = home[k] + off[k];
                if (torus_) {
                    if (c < 0) c += dims_[k];
                    if (c >= dims_[k]) c -= dims_[k];
                } else if (c < 0 || c >= dims_[k]) {
                    valid = false;
                    break;
                }
                idx = idx * std::size_t(dims_[k]) + std::size_t(c);
            }
            if (valid)
                for (int id : cells_[idx])
                    if (f(id)) return true;
            int k = 0;
            for (; k < D; ++k) {
                if (++off[k] <= 1) break;
                off[k] = -1;
            }
            if (k == D) return false;
        }
    }

  private:
    std::size_t cell_of(const Point<D>& p) const {
        std::size_t idx = 0;
        for (int k = 0; k < D; ++k) {
            int c = static_cast<int>(p[k] / width_[k]);
            idx = idx * std::size_t(dims_[k]) + std::size_t(std::clamp(c, 0, dims_[k] - 1));
        }
        return idx;
    }
    bool active_ = false;
    bool torus_ = false;
    std::array<int, D> dims_{};
    std::array<double, D> width_{};
    std::vector<std::vector<int>> cells_;
};

constexpr std::size_t grid_threshold = 1000;

} // namespace detail

template <int D> struct SpatialState {
    branching::ProcessParams params;
    double t = 0.0;
    double horizon = 0.0;
    std::vector<Island<D>> islands;
    std::vector<double> accepted_times;
    std::vector<EventRecord<D>> event_log;
    std::vector<Point<D>> probes;
    std::uint64_t candidates = 0;
    bool covered = false;
    double covered_at = std::numeric_limits<double>::quiet_NaN();

    mutable std::vector<double> probe_tau_cache;
    mutable bool probe_tau_valid = false;
};

/// First time point P belongs to the union: min over islands of
/// birth + d_C(center, P).
template <int D> inline double passage_time(const SpatialState<D>& state, const Point<D>& p) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& isl : state.islands) {
        if (isl.birth >= best) continue;
        best = std::min(best, isl.birth + geometry::distance<D>(state.params.manifold, isl.center, p));
    }
    return best;
}

template <int D> inline const std::vector<double>& probe_passage_times(const SpatialState<D>& state) {
    if (!state.probe_tau_valid) {
        state.probe_tau_cache.clear();
        state.probe_tau_cache.reserve(state.probes.size());
        for (const auto& p : state.probes)
            state.probe_tau_cache.push_back(passage_time<D>(state, p));
        state.probe_tau_valid = true;
    }
    return state.probe_tau_cache;
}

/// Per-probe first-coverage times; +inf where the probe was still uncovered
/// at the end of the run.
template <int D> inline std::vector<double> first_passage_times(const SpatialState<D>& state) {
    std::vector<double> out = probe_passage_times(state);
    for (double& tau : out)
        if (tau > state.t) tau = std::numeric_limits<double>::infinity();
    return out;
}

namespace detail {

/// Exact covered length fraction on the circle at time t: sorted merge of
/// the wrapped coordinate arcs [c - scale*age, c + scale*age].
inline double exact_circle_fraction(const ManifoldSpec& spec, const std::vector<Island<1>>& islands,
                                    double t) {
    const double L = spec.sides[0];
    std::vector<std::pair<double, double>> arcs; // (start in [0,L), length)
    arcs.reserve(islands.size());
    for (const auto& isl : islands) {
        if (isl.birth > t) continue;
        double len = 2.0 * spec.ball_scale * (t - isl.birth);
        if (len >= L) return 1.0;
        if (len <= 0.0) continue;
        arcs.emplace_back(geometry::wrap_coord(isl.center[0] - 0.5 * len, L), len);
    }
    if (arcs.empty()) return 0.0;
    // Split arcs crossing the wrap point.
    std::vector<std::pair<double, double>> segs; // (start, end), end <= L
    segs.reserve(arcs.size() + 4);
    for (auto [s, len] : arcs) {
        double e = s + len;
        if (e <= L) {
            segs.emplace_back(s, e);
        } else {
            segs.emplace_back(s, L);
            segs.emplace_back(0.0, e - L);
        }
    }
    std::sort(segs.begin(), segs.end());
    double covered = 0.0, cur_s = segs[0].first, cur_e = segs[0].second;
    for (std::size_t i = 1; i < segs.size(); ++i) {
        if (segs[i].first <= cur_e) {
            cur_e = std::max(cur_e, segs[i].second);
        } else {
            covered += cur_e - cur_s;
            cur_s = segs[i].first;
            cur_e = segs[i].second;
        }
    }
    covered += cur_e - cur_s;
    return std::min(1.0, covered / L);
}

/// Exact circle coverage time from a frozen island set: the upper envelope
/// peak of f(x) = min_j (birth_j + |x - c_j|_wrap / scale), evaluated by
/// multi-source relaxation around the sorted centers.
inline double circle_envelope_time(const ManifoldSpec& spec, const std::vector<Island<1>>& islands) {
    const double L = spec.sides[0];
    const double speed = spec.ball_scale;
    std::size_t n = islands.size();
    std::vector<std::pair<double, double>> cs; // (center, birth)
    cs.reserve(n);
    for (const auto& isl : islands) cs.emplace_back(isl.center[0], isl.birth);
    std::sort(cs.begin(), cs.end());
    std::vector<double> f(n), gap(n);
    for (std::size_t i = 0; i < n; ++i) {
        f[i] = cs[i].second;
        double next = (i + 1 < n) ? cs[i + 1].first : cs[0].first + L;
        gap[i] = next - cs[i].first;
    }
    for (std::size_t pass = 0; pass < 2; ++pass)
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t j = (i + 1) % n;
            f[j] = std::min(f[j], f[i] + gap[i] / speed);
        }
    for (std::size_t pass = 0; pass < 2; ++pass)
        for (std::size_t ii = n; ii-- > 0;) {
            std::size_t j = (ii + 1) % n;
            f[ii] = std::min(f[ii], f[j] + gap[ii] / speed);
        }
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = (i + 1) % n;
        worst = std::max(worst, 0.5 * (f[i] + f[j]) + gap[i] / (2.0 * speed));
    }
    return worst;
}

} // namespace detail

/// Exact covered fraction; only defined for d = 1.
template <int D> inline double covered_fraction_exact_d1(const SpatialState<D>& state, double t) {
    if constexpr (D != 1) {
        throw std::invalid_argument("exact covered fraction is only available for d = 1");
    } else {
        if (t > state.t * (1.0 + 1e-12) + 1e-12)
            throw std::invalid_argument("covered_fraction query beyond simulated time");
        return detail::exact_circle_fraction(state.params.manifold, state.islands, t);
    }
}

struct ProbeEstimate {
    double value = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};

template <int D> inline ProbeEstimate covered_fraction_probe(const SpatialState<D>& state, double t) {
    if (t > state.t * (1.0 + 1e-12) + 1e-12)
        throw std::invalid_argument("covered_fraction query beyond simulated time");
    const auto& tau = probe_passage_times(state);
    if (tau.empty()) throw std::invalid_argument("no probes in this run");
    std::size_t hit = 0;
    for (double x : tau) hit += (x <= t);
    ProbeEstimate est;
    est.n = tau.size();
    est.value = double(hit) / double(est.n);
    est.se = stats::binomial_se(est.value, est.n);
    return est;
}

/// Time at which C is fully covered. d = 1: exact via the circle envelope;
/// d >= 2: max probe first-coverage time (probe-resolution estimate).
template <int D> inline double coverage_time(const SpatialState<D>& state) {
    if constexpr (D == 1) {
        double env = detail::circle_envelope_time(state.params.manifold, state.islands);
        if (env > state.t)
            throw CoverageIncomplete("horizon reached before full coverage (needs t >= " +
                                     std::to_string(env) + ")");
        return env;
    } else {
        if (state.probes.empty())
            throw std::invalid_argument("coverage_time for d >= 2 needs probes");
        const auto& tau = probe_passage_times(state);
        double worst = 0.0;
        for (double x : tau) worst = std::max(worst, x);
        if (worst > state.t)
            throw CoverageIncomplete("horizon reached before all probes were covered");
        return worst;
    }
}

/// Exact event-driven thinning simulation of the spread process.
/// Candidates arrive at the full superposition rate (gossip: rho*vK*age^d
/// per island; small-world: rho*vK*d*age^{d-1}), the source is chosen
/// proportionally to its term, and acceptance enforces canonical ownership
/// (gossip) or exposed-boundary membership (small-world). Accepted marks in
/// uncovered territory become new islands.
template <int D>
SpatialState<D> simulate(const branching::ProcessParams& params, double T, Rng& rng,
                         const SimOptions& opts = {}) {
    const ManifoldSpec& spec = params.manifold;
    if (spec.d != D) throw std::invalid_argument("manifold dimension does not match simulator");
    if (!(T >= 0.0) || !std::isfinite(T)) throw std::invalid_argument("bad horizon");
    if (spec.topology == geometry::Topology::torus && T > spec.max_radius() * (1.0 + 1e-12))
        throw std::invalid_argument("horizon exceeds the torus radius cap min(sides)/(2*scale)");
    const int power = params.kind == Kind::gossip ? spec.d : spec.d - 1;
    const double inf = std::numeric_limits<double>::infinity();

    SpatialState<D> state;
    state.params = params;
    state.horizon = T;
    state.islands.push_back({geometry::sample_uniform<D>(spec, rng), 0.0, 0});
    state.probes.reserve(opts.n_probes);
    for (std::size_t i = 0; i < opts.n_probes; ++i)
        state.probes.push_back(geometry::sample_uniform<D>(spec, rng));

    branching::MomentBuf M{};
    M[0] = 1.0;
    double t = 0.0;

    detail::Fenwick fen;
    detail::CellGrid<D> grid;
    bool indexed = false;
    auto build_index = [&] {
        grid.init(spec, spec.ball_scale * T);
        for (const auto& isl : state.islands) {
            fen.push(detail::ipow(T - isl.birth, power));
            if (grid.active()) grid.insert(isl.center, isl.id);
        }
        indexed = true;
    };

    auto covers_at = [&](int id, const Point<D>& q) {
        return geometry::covers<D>(spec, state.islands[std::size_t(id)], q, t);
    };
    auto strictly_covers_at = [&](int id, const Point<D>& q) {
        const auto& isl = state.islands[std::size_t(id)];
        return geometry::distance<D>(spec, isl.center, q) < t - isl.birth;
    };
    // Gossip owner rule: some island listed before the source covers Q.
    auto earlier_covers = [&](const Point<D>& q, int limit) {
        if (indexed && grid.active())
            return grid.scan(q, [&](int id) { return id < limit && covers_at(id, q); });
        for (int id = 0; id < limit; ++id)
            if (covers_at(id, q)) return true;
        return false;
    };
    auto other_strictly_covers = [&](const Point<D>& q, int skip) {
        if (indexed && grid.active())
            return grid.scan(q, [&](int id) { return id != skip && strictly_covers_at(id, q); });
        for (int id = 0; id < int(state.islands.size()); ++id)
            if (id != skip && strictly_covers_at(id, q)) return true;
        return false;
    };
    auto any_covers = [&](const Point<D>& q) {
        if (indexed && grid.active()) return grid.scan(q, [&](int id) { return covers_at(id, q); });
        for (int id = 0; id < int(state.islands.size()); ++id)
            if (covers_at(id, q)) return true;
        return false;
    };

    auto pick_source = [&]() -> int {
        if (!indexed) {
            double target = rng.uniform() * M[power];
            double acc = 0.0;
            for (std::size_t j = 0; j < state.islands.size(); ++j) {
                acc += detail::ipow(t - state.islands[j].birth, power);
                if (acc > target) return int(j);
            }
            return int(state.islands.size()) - 1;
        }
        while (true) {
            std::size_t j = fen.sample(rng.uniform() * fen.total());
            if (power == 0) return int(j);
            double birth = state.islands[j].birth;
            double ratio = detail::ipow((t - birth) / (T - birth), power);
            if (rng.uniform() < ratio) return int(j);
        }
    };

    // Coverage detector state.
    std::vector<double> probe_min(state.probes.size(), inf);
    double probe_worst = inf;
    bool probe_dirty = !state.probes.empty();
    double next_envelope_check = 0.0;
    const double check_gap = 0.25 / params.lambda0;

    while (true) {
        if (opts.stop_when_covered) {
            if constexpr (D == 1) {
                if (spec.vK * M[1] >= spec.volume() && t >= next_envelope_check) {
                    double env = detail::circle_envelope_time(spec, state.islands);
                    if (env <= t) {
                        state.covered = true;
                        state.covered_at = env;
                        break;
                    }
                    next_envelope_check = t + check_gap;
                }
            } else {
                if (probe_dirty && !state.probes.empty()) {
                    probe_worst = 0.0;
                    for (double x : probe_min) probe_worst = std::max(probe_worst, x);
                    probe_dirty = false;
                }
                if (t >= probe_worst) {
                    state.covered = true;
                    state.covered_at = probe_worst;
                    break;
                }
            }
        }

        auto poly = branching::intensity_poly(params, M);
        double dt = branching::invert_intensity(poly, rng.exponential());
        if (!(t + dt < T)) {
            t = T;
            break;
        }
        branching::shift_moments(M, params.r, dt);
        double tn = t + dt;
        if (tn <= t) tn = std::nextafter(t, inf); // keep log times strictly increasing
        t = tn;
        if (++state.candidates > opts.event_cap)
            throw EventCapExceeded("spatial event cap exceeded at t=" + std::to_string(t));
        if (!indexed && state.islands.size() > detail::grid_threshold) build_index();

        int src = pick_source();
        double age = t - state.islands[std::size_t(src)].birth;
        Point<D> q = params.kind == Kind::gossip
                         ? geometry::sample_in_ball<D>(spec, state.islands[std::size_t(src)].center, age, rng)
                         : geometry::sample_on_sphere<D>(spec, state.islands[std::size_t(src)].center, age, rng);

        Disposition disp;
        Point<D> mark{};
        bool has_mark = false;
        if (!geometry::contains<D>(spec, q)) {
            disp = Disposition::rejected_outside;
        } else if (params.kind == Kind::gossip ? earlier_covers(q, src)
                                               : other_strictly_covers(q, src)) {
            disp = Disposition::rejected_owner;
        } else {
            mark = geometry::sample_uniform<D>(spec, rng);
            has_mark = true;
            if (any_covers(mark)) {
                disp = Disposition::accepted_mark_covered;
            } else {
                disp = Disposition::accepted_new_island;
                int id = int(state.islands.size());
                state.islands.push_back({mark, t, id});
                M[0] += 1.0;
                if (indexed) {
                    fen.push(detail::ipow(T - t, power));
                    if (grid.active()) grid.insert(mark, id);
                }
                if (opts.stop_when_covered && D != 1)
                    for (std::size_t i = 0; i < probe_min.size(); ++i) {
                        double cand = t + geometry::distance<D>(spec, mark, state.probes[i]);
                        if (cand < probe_min[i]) {
                            probe_min[i] = cand;
                            probe_dirty = true;
                        }
                    }
            }
            state.accepted_times.push_back(t);
        }
        if (opts.record_log) state.event_log.push_back({t, src, q, mark, has_mark, disp});
    }
    state.t = t;
    return state;
}

template <int D>
SpatialState<D> simulate(const branching::ProcessParams& params, double T, std::size_t n_probes,
                         Rng& rng) {
    SimOptions opts;
    opts.n_probes = n_probes;
    return simulate<D>(params, T, rng, opts);
}

// ---------------------------------------------------------------------------
// Coupled ghost-labeled run: the full branching process (no thinning ever
// removes a candidate; every mark becomes an island) with chronological
// ghost labels. A candidate is a ghost when its source is one, when its
// contact point duplicates territory attributed to an earlier-listed island,
// or when its mark is already covered. Two label variants are kept: the
// literal one tests against every prior island (ghost cones included), the
// real-only one tests against non-ghost islands alone.
// ---------------------------------------------------------------------------

template <int D> struct CoupledIsland {
    Point<D> center{};
    double birth = 0.0;
    int parent = -1;
    Point<D> contact{}; // Q of the candidate that created this island
    bool ghost_literal = false;
    bool ghost_real_only = false;
};

template <int D> struct CoupledRun {
    branching::ProcessParams params;
    double T = 0.0;
    std::vector<CoupledIsland<D>> islands;
    double first_overlap_time = std::numeric_limits<double>::infinity();
};

template <int D>
CoupledRun<D> coupled_ghost_run(const branching::ProcessParams& params, double T, Rng& rng,
                                std::uint64_t event_cap = branching::default_event_cap) {
    const ManifoldSpec& spec = params.manifold;
    if (spec.d != D) throw std::invalid_argument("manifold dimension does not match simulator");
    if (spec.topology == geometry::Topology::torus && T > spec.max_radius() * (1.0 + 1e-12))
        throw std::invalid_argument("horizon exceeds the torus radius cap min(sides)/(2*scale)");
    const int power = params.kind == Kind::gossip ? spec.d : spec.d - 1;

    CoupledRun<D> run;
    run.params = params;
    run.T = T;
    run.islands.push_back({geometry::sample_uniform<D>(spec, rng), 0.0, -1, {}, false, false});

    branching::MomentBuf M{};
    M[0] = 1.0;
    double t = 0.0;
    std::uint64_t events = 0;

    auto covers_q = [&](const CoupledIsland<D>& isl, const Point<D>& q, bool strict) {
        double dist = geometry::distance<D>(spec, isl.center, q);
        double age = t - isl.birth;
        return strict ? dist < age : dist <= age;
    };
    // Duplicate-contact test under one labeling; gossip checks islands listed
    // before the source, small-world checks strict coverage by any island
    // except the source.
    auto contact_ghost = [&](const Point<D>& q, int src, auto&& is_real) {
        if (params.kind == Kind::gossip) {
            for (int id = 0; id < src; ++id)
                if (is_real(id) && covers_q(run.islands[std::size_t(id)], q, false)) return true;
            return false;
        }
        for (int id = 0; id < int(run.islands.size()); ++id)
            if (id != src && is_real(id) && covers_q(run.islands[std::size_t(id)], q, true))
                return true;
        return false;
    };
    auto mark_ghost = [&](const Point<D>& p, auto&& is_real) {
        for (int id = 0; id < int(run.islands.size()); ++id)
            if (is_real(id) && covers_q(run.islands[std::size_t(id)], p, false)) return true;
        return false;
    };

    while (true) {
        auto poly = branching::intensity_poly(params, M);
        double dt = branching::invert_intensity(poly, rng.exponential());
        if (!(t + dt < T)) break;
        branching::shift_moments(M, params.r, dt);
        t += dt;
        if (++events > event_cap)
            throw EventCapExceeded("coupled run event cap exceeded at t=" + std::to_string(t));

        double target = rng.uniform() * M[power];
        double acc = 0.0;
        int src = int(run.islands.size()) - 1;
        for (std::size_t j = 0; j < run.islands.size(); ++j) {
            acc += detail::ipow(t - run.islands[j].birth, power);
            if (acc > target) {
                src = int(j);
                break;
            }
        }
        double age = t - run.islands[std::size_t(src)].birth;
        Point<D> q = params.kind == Kind::gossip
                         ? geometry::sample_in_ball<D>(spec, run.islands[std::size_t(src)].center, age, rng)
                         : geometry::sample_on_sphere<D>(spec, run.islands[std::size_t(src)].center, age, rng);
        Point<D> mark = geometry::sample_uniform<D>(spec, rng);

        bool outside = !geometry::contains<D>(spec, q);
        auto all = [&](int) { return true; };
        auto real_only = [&](int id) { return !run.islands[std::size_t(id)].ghost_real_only; };
        const auto& src_isl = run.islands[std::size_t(src)];
        bool g_lit = src_isl.ghost_literal || outside || contact_ghost(q, src, all) ||
                     mark_ghost(mark, all);
        bool g_real = src_isl.ghost_real_only || outside || contact_ghost(q, src, real_only) ||
                      mark_ghost(mark, real_only);

        for (const auto& isl : run.islands) {
            double meet = 0.5 * (isl.birth + t + geometry::distance<D>(spec, isl.center, mark));
            run.first_overlap_time = std::min(run.first_overlap_time, meet);
        }
        run.islands.push_back({mark, t, src, q, g_lit, g_real});
        M[0] += 1.0;
    }
    return run;
}

template <int D>
inline double ghost_fraction(const CoupledRun<D>& run, double t, bool literal = true) {
    std::size_t total = 0, ghosts = 0;
    for (const auto& isl : run.islands) {
        if (isl.birth > t) continue;
        ++total;
        ghosts += literal ? isl.ghost_literal : isl.ghost_real_only;
    }
    return total == 0 ? 0.0 : double(ghosts) / double(total);
}

// ---------------------------------------------------------------------------
// Intersection statistics for islands with uniform random centers.
// ---------------------------------------------------------------------------

struct IntersectionStats {
    std::uint64_t n_pairs = 0; // observed intersecting pairs
    double mu = 0.0;           // predicted mean, single collection
    double mu_prime = 0.0;     // predicted mean, two collections
    double p_lambda_plus = 0.0;
    double tv_bound = 0.0; // 4 n p+ (self) or 2 (m+n) p+ (cross)
};

inline double p_lambda_plus(const branching::ProcessParams& params) {
    return detail::ipow(3.0 * std::log(params.Lambda), params.manifold.d) / params.Lambda;
}

template <int D>
IntersectionStats intersection_stats(const branching::ProcessParams& params,
                                     const std::vector<Island<D>>& islands, double t) {
    const ManifoldSpec& spec = params.manifold;
    IntersectionStats out;
    branching::MomentBuf M{};
    for (const auto& isl : islands)
        for (int l = 0; l <= spec.d; ++l) M[l] += detail::ipow(t - isl.birth, l);
    for (std::size_t i = 0; i < islands.size(); ++i)
        for (std::size_t j = i + 1; j < islands.size(); ++j) {
            double sum = (t - islands[i].birth) + (t - islands[j].birth);
            if (geometry::distance<D>(spec, islands[i].center, islands[j].center) <= sum)
                ++out.n_pairs;
        }
    double acc = 0.0;
    for (int l = 0; l <= spec.d; ++l)
        acc += branching::binom(spec.d, l) * (M[l] * M[spec.d - l] - M[spec.d]);
    out.mu = 0.5 * spec.vK * acc / spec.volume();
    out.p_lambda_plus = p_lambda_plus(params);
    out.tv_bound = 4.0 * double(islands.size()) * out.p_lambda_plus;
    return out;
}

template <int D>
IntersectionStats intersection_stats(const branching::ProcessParams& params,
                                     const std::vector<Island<D>>& first, double t,
                                     const std::vector<Island<D>>& second, double s) {
    const ManifoldSpec& spec = params.manifold;
    IntersectionStats out;
    branching::MomentBuf M{}, Mt{};
    for (const auto& isl : first)
        for (int l = 0; l <= spec.d; ++l) M[l] += detail::ipow(t - isl.birth, l);
    for (const auto& isl : second)
        for (int l = 0; l <= spec.d; ++l) Mt[l] += detail::ipow(s - isl.birth, l);
    for (const auto& a : first)
        for (const auto& b : second) {
            double sum = (t - a.birth) + (s - b.birth);
            if (geometry::distance<D>(spec, a.center, b.center) <= sum) ++out.n_pairs;
        }
    double acc = 0.0;
    for (int l = 0; l <= spec.d; ++l) acc += branching::binom(spec.d, l) * M[l] * Mt[spec.d - l];
    out.mu_prime = spec.vK * acc / spec.volume();
    out.p_lambda_plus = p_lambda_plus(params);
    out.tv_bound = 2.0 * double(first.size() + second.size()) * out.p_lambda_plus;
    return out;
}

// ---------------------------------------------------------------------------
// Exports.
// ---------------------------------------------------------------------------

namespace detail {

inline void append_number(std::string& s, double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    s += buf;
}

template <int D> inline void append_point_json(std::string& s, const Point<D>& p) {
    s += '[';
    for (int k = 0; k < D; ++k) {
        if (k) s += ',';
        append_number(s, p[k]);
    }
    s += ']';
}

} // namespace detail

/// One JSON object per candidate: t, src, loc, mark, disposition.
template <int D> void write_event_log_jsonl(std::ostream& os, const SpatialState<D>& state) {
    std::string line;
    for (const auto& ev : state.event_log) {
        line.clear();
        line += "{\"t\":";
        detail::append_number(line, ev.t);
        line += ",\"src\":" + std::to_string(ev.source);
        line += ",\"loc\":";
        detail::append_point_json<D>(line, ev.loc);
        line += ",\"mark\":";
        if (ev.has_mark)
            detail::append_point_json<D>(line, ev.mark);
        else
            line += "null";
        line += ",\"disposition\":\"";
        line += disposition_name(ev.disposition);
        line += "\"}\n";
        os << line;
    }
}

/// CSV of probe first-coverage times ("inf" when uncovered at the horizon).
template <int D> void write_probe_csv(std::ostream& os, const SpatialState<D>& state) {
    os << "probe,tau\n";
    auto taus = first_passage_times(state);
    std::string line;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        line = std::to_string(i);
        line += ',';
        if (std::isinf(taus[i]))
            line += "inf";
        else
            detail::append_number(line, taus[i]);
        line += '\n';
        os << line;
    }
}

} // namespace spread::spatial
