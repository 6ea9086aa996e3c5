#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "spread/rng.hpp"

namespace spread::geometry {

enum class Topology { torus, rectangle };
enum class BallShape { round, sup };

/// Euclidean unit-ball volume (round) or 2^d (sup).
inline double unit_ball_volume(BallShape shape, int d) {
    if (shape == BallShape::sup) return std::pow(2.0, d);
    return std::pow(M_PI, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

/// Flat space C: a d-torus or d-rectangle with metric balls K(P,s).
///
/// K(P,s) is the round or sup ball of intrinsic radius ball_scale*s, so the
/// metric is the shape norm divided by ball_scale and v_s(K) = s^d*vK with
/// vK = unit_ball_volume*ball_scale^d. ball_scale = 1 gives the intrinsic
/// metric; a scaled round ball (e.g. radius s/sqrt(2*pi), vK = 1/2) is the
/// standard square-torus normalization.
struct ManifoldSpec {
    int d = 1;
    std::vector<double> sides;
    Topology topology = Topology::torus;
    BallShape ball_shape = BallShape::round;
    double ball_scale = 1.0;
    double vK = 2.0;

    double volume() const {
        double L = 1.0;
        for (double s : sides) L *= s;
        return L;
    }

    double min_side() const {
        double m = sides[0];
        for (double s : sides) m = std::min(m, s);
        return m;
    }

    /// Largest ball radius (in time units) honouring the torus wrap cap
    /// 2*(intrinsic radius) <= min(sides).
    double max_radius() const { return min_side() / (2.0 * ball_scale); }
};

inline ManifoldSpec make_manifold(int d, std::vector<double> sides, Topology topology,
                                  BallShape shape, double ball_scale = 1.0,
                                  double vK_override = -1.0) {
    if (d < 1 || d > 4) throw std::invalid_argument("manifold dimension must be in [1,4]");
    if (static_cast<int>(sides.size()) != d)
        throw std::invalid_argument("sides must have exactly d entries");
    for (double s : sides)
        if (!(s > 0.0)) throw std::invalid_argument("sides must be positive");
    if (!(ball_scale > 0.0)) throw std::invalid_argument("ball_scale must be positive");
    ManifoldSpec spec;
    spec.d = d;
    spec.sides = std::move(sides);
    spec.topology = topology;
    spec.ball_shape = shape;
    spec.ball_scale = ball_scale;
    spec.vK = unit_ball_volume(shape, d) * std::pow(ball_scale, d);
    if (vK_override > 0.0 && std::abs(vK_override - spec.vK) > 1e-12 * spec.vK)
        throw std::invalid_argument("vK override does not match the ball shape");
    return spec;
}

template <int D> using Point = std::array<double, D>;

template <int D> struct Island {
    Point<D> center{};
    double birth = 0.0;
    std::int64_t id = 0;
};

/// Lexicographic (birth, id) order; the canonical-owner tie-break rule.
template <int D> inline bool born_before(const Island<D>& a, const Island<D>& b) {
    if (a.birth != b.birth) return a.birth < b.birth;
    return a.id < b.id;
}

template <int D> inline Point<D> sample_uniform(const ManifoldSpec& spec, Rng& rng) {
    Point<D> p;
    for (int k = 0; k < D; ++k) p[k] = rng.uniform() * spec.sides[k];
    return p;
}

inline double wrap_coord(double x, double side) {
    double y = std::fmod(x, side);
    if (y < 0.0) y += side;
    return y;
}

template <int D> inline void wrap_point(const ManifoldSpec& spec, Point<D>& p) {
    for (int k = 0; k < D; ++k) p[k] = wrap_coord(p[k], spec.sides[k]);
}

template <int D> inline bool contains(const ManifoldSpec& spec, const Point<D>& p) {
    if (spec.topology == Topology::torus) return true;
    for (int k = 0; k < D; ++k)
        if (p[k] < 0.0 || p[k] >= spec.sides[k]) return false;
    return true;
}

/// Metric d_C: per-axis (wrapped) differences, combined by the ball shape's
/// norm, divided by ball_scale so that K(P,s) = {q : d_C(p,q) <= s}.
template <int D>
inline double distance(const ManifoldSpec& spec, const Point<D>& p, const Point<D>& q) {
    double acc = 0.0;
    for (int k = 0; k < D; ++k) {
        double dx = std::abs(p[k] - q[k]);
        if (spec.topology == Topology::torus) dx = std::min(dx, spec.sides[k] - dx);
        if (spec.ball_shape == BallShape::round)
            acc += dx * dx;
        else
            acc = std::max(acc, dx);
    }
    double norm = spec.ball_shape == BallShape::round ? std::sqrt(acc) : acc;
    return norm / spec.ball_scale;
}

/// v_s(K) = s^d * vK. For rectangles this is the unclipped volume; clipping
/// is realized by rejection in the spatial simulator.
inline double ball_volume(const ManifoldSpec& spec, double s) {
    if (s < 0.0) throw std::invalid_argument("ball radius must be nonnegative");
    if (spec.topology == Topology::torus && s > spec.max_radius() * (1.0 + 1e-12))
        throw std::invalid_argument("ball radius exceeds torus wrap cap 2s <= min(sides)");
    return std::pow(s, spec.d) * spec.vK;
}

template <int D>
inline Point<D> sample_in_ball(const ManifoldSpec& spec, const Point<D>& center, double s,
                               Rng& rng) {
    Point<D> p = center;
    double r = spec.ball_scale * s;
    if (spec.ball_shape == BallShape::sup) {
        for (int k = 0; k < D; ++k) p[k] += rng.uniform_in(-r, r);
    } else if constexpr (D == 1) {
        p[0] += rng.uniform_in(-r, r);
    } else {
        Point<D> dir;
        double n2 = 0.0;
        do {
            n2 = 0.0;
            for (int k = 0; k < D; ++k) {
                dir[k] = rng.normal();
                n2 += dir[k] * dir[k];
            }
        } while (n2 == 0.0);
        double radius = r * std::pow(rng.uniform(), 1.0 / D) / std::sqrt(n2);
        for (int k = 0; k < D; ++k) p[k] += dir[k] * radius;
    }
    if (spec.topology == Topology::torus) wrap_point<D>(spec, p);
    return p;
}

template <int D>
inline Point<D> sample_on_sphere(const ManifoldSpec& spec, const Point<D>& center, double s,
                                 Rng& rng) {
    Point<D> p = center;
    double r = spec.ball_scale * s;
    if constexpr (D == 1) {
        p[0] += (rng.uniform() < 0.5 ? -r : r);
    } else if (spec.ball_shape == BallShape::sup) {
        // Faces of the cube have equal measure: pick one, then uniform on it.
        std::uint64_t f = rng.below(2 * D);
        int axis = static_cast<int>(f / 2);
        double sign = (f % 2 == 0) ? -1.0 : 1.0;
        for (int k = 0; k < D; ++k)
            p[k] += (k == axis) ? sign * r : rng.uniform_in(-r, r);
    } else {
        Point<D> dir;
        double n2 = 0.0;
        do {
            n2 = 0.0;
            for (int k = 0; k < D; ++k) {
                dir[k] = rng.normal();
                n2 += dir[k] * dir[k];
            }
        } while (n2 == 0.0);
        double f = r / std::sqrt(n2);
        for (int k = 0; k < D; ++k) p[k] += dir[k] * f;
    }
    if (spec.topology == Topology::torus) wrap_point<D>(spec, p);
    return p;
}

template <int D>
inline bool covers(const ManifoldSpec& spec, const Island<D>& island, const Point<D>& q,
                   double t) {
    if (t < island.birth) return false;
    return distance<D>(spec, island.center, q) <= t - island.birth;
}

/// Exact |C_delta|/L where C_delta = {P : K(P,delta) meets the boundary}.
/// Zero for the torus; for a rectangle the complement is the box shrunk by
/// the intrinsic ball radius on every side.
inline double boundary_fraction(const ManifoldSpec& spec, double delta) {
    if (delta < 0.0) throw std::invalid_argument("delta must be nonnegative");
    if (spec.topology == Topology::torus) return 0.0;
    double r = spec.ball_scale * delta;
    double interior = 1.0;
    for (double s : spec.sides) interior *= std::max(0.0, 1.0 - 2.0 * r / s);
    return 1.0 - interior;
}

inline std::string topology_name(Topology t) {
    return t == Topology::torus ? "torus" : "rectangle";
}

inline std::string ball_shape_name(BallShape b) {
    return b == BallShape::round ? "round" : "sup";
}

inline Topology topology_from_name(const std::string& s) {
    if (s == "torus") return Topology::torus;
    if (s == "rectangle") return Topology::rectangle;
    throw std::invalid_argument("unknown topology: " + s);
}

inline BallShape ball_shape_from_name(const std::string& s) {
    if (s == "round") return BallShape::round;
    if (s == "sup") return BallShape::sup;
    throw std::invalid_argument("unknown ball_shape: " + s);
}

} // namespace spread::geometry
