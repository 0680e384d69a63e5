#pragma once

// Strictly convex planar domains with a C^2 positively oriented boundary
// parametrization Z(t), t in [0, 1). Provides ray tracing of characteristics,
// the ingoing/outgoing partition of the boundary for a velocity, arc lengths,
// and chord families used for boundary-flux and domain quadrature.

#include "dvm/error.hpp"
#include "dvm/vec2.hpp"

#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace dvm {

inline constexpr Real two_pi = 2.0 * std::numbers::pi;

struct EllipseSpec {
  Real a = 1.0;
  Real b = 1.0;
  Vec2 center{};
  Real rotation = 0.0;
};

/// Star-shaped curve r(θ) = R (1 + ε cos(mθ)); strictly convex for small ε.
struct HarmonicSpec {
  Real radius = 1.0;
  Real amplitude = 0.0;
  int mode = 3;
  Vec2 center{};
  Real rotation = 0.0;
};

using DomainSpec = std::variant<EllipseSpec, HarmonicSpec>;

struct RayTrace {
  Real s_plus = 0.0;  // backward distance (in units of v) to the entry point
  Real s_minus = 0.0; // forward distance to the exit point
  Vec2 z_plus;
  Vec2 z_minus;
  Real t_plus = 0.0; // boundary parameters of z_plus / z_minus
  Real t_minus = 0.0;
};

/// Parameter interval [begin, end) on the periodic boundary; end may exceed 1.
struct Arc {
  Real begin = 0.0;
  Real end = 0.0;

  Real length() const { return end - begin; }
  bool contains(Real t) const {
    Real d = std::fmod(t - begin, 1.0);
    if (d < 0.0)
      d += 1.0;
    return d > 0.0 && d < length();
  }
};

struct BoundaryPartition {
  Arc arc_in;  // v·n > 0
  Arc arc_out; // v·n < 0
  std::array<Real, 2> tangency_t{};
  std::array<Vec2, 2> tangency_points{};
};

inline Real wrap_unit(Real t) {
  Real r = std::fmod(t, 1.0);
  if (r < 0.0)
    r += 1.0;
  return r >= 1.0 ? 0.0 : r;
}

class ConvexDomain {
public:
  explicit ConvexDomain(DomainSpec spec) : spec_(std::move(spec)) {
    std::visit([](const auto &s) { check_spec(s); }, spec_);
    constexpr int n = 4096;
    lo_ = hi_ = point(0.0);
    min_curvature_ = std::numeric_limits<Real>::infinity();
    std::vector<Vec2> pts;
    for (int k = 0; k < n; ++k) {
      const Real t = static_cast<Real>(k) / n;
      const Vec2 z = point(t);
      lo_ = {std::min(lo_.x, z.x), std::min(lo_.y, z.y)};
      hi_ = {std::max(hi_.x, z.x), std::max(hi_.y, z.y)};
      min_curvature_ = std::min(min_curvature_, curvature(t));
      if (k % 8 == 0)
        pts.push_back(z);
    }
    if (!(min_curvature_ > 0.0))
      throw InvalidArgument("domain boundary is not strictly convex (min curvature " +
                            std::to_string(min_curvature_) + ")");
    for (std::size_t a = 0; a < pts.size(); ++a)
      for (std::size_t b = a + 1; b < pts.size(); ++b)
        diameter_ = std::max(diameter_, norm(pts[a] - pts[b]));
    // Sampled extents undershoot by O(n^-2); pad conservatively.
    const Real pad = 1e-4 * diameter_;
    lo_ -= Vec2{pad, pad};
    hi_ += Vec2{pad, pad};
    diameter_ *= 1.0 + 1e-5;
  }

  static ConvexDomain ellipse(Real a, Real b, Vec2 center = {}, Real rotation = 0.0) {
    return ConvexDomain(EllipseSpec{a, b, center, rotation});
  }
  static ConvexDomain unit_disk() { return ellipse(1.0, 1.0); }

  const DomainSpec &spec() const { return spec_; }

  Vec2 point(Real t) const {
    return std::visit([&](const auto &s) { return s.center + rotate(local_point(s, t), s.rotation); },
                      spec_);
  }
  /// dZ/dt.
  Vec2 tangent(Real t) const {
    return std::visit([&](const auto &s) { return rotate(local_d1(s, t), s.rotation); }, spec_);
  }
  Vec2 second_derivative(Real t) const {
    return std::visit([&](const auto &s) { return rotate(local_d2(s, t), s.rotation); }, spec_);
  }
  /// Unit inward normal n(Z(t)); the boundary is positively oriented.
  Vec2 inward_normal(Real t) const { return normalized(perp(tangent(t))); }
  Real speed(Real t) const { return norm(tangent(t)); }
  Real curvature(Real t) const {
    const Vec2 d1 = tangent(t);
    const Real sp = norm(d1);
    return cross(d1, second_derivative(t)) / (sp * sp * sp);
  }

  /// Negative inside, zero on the boundary, positive outside.
  Real level(const Vec2 &z) const {
    return std::visit([&](const auto &s) { return local_level(s, to_local(s, z)); }, spec_);
  }
  /// First-order signed distance to the boundary (negative inside).
  Real signed_distance(const Vec2 &z) const {
    return std::visit([&](const auto &s) { return local_distance(s, to_local(s, z)); }, spec_);
  }
  /// Boundary parameter of the boundary point radially associated with z.
  Real param_of(const Vec2 &z) const {
    return std::visit([&](const auto &s) { return local_param(s, to_local(s, z)); }, spec_);
  }

  Real diameter() const { return diameter_; }
  Vec2 lower() const { return lo_; }
  Vec2 upper() const { return hi_; }
  Real min_curvature() const { return min_curvature_; }
  /// Points closer than this to ∂Ω count as boundary points.
  Real collar() const { return 1e-9 * diameter_; }
  bool contains(const Vec2 &z) const { return signed_distance(z) < -collar(); }

  /// Entry and exit of the characteristic through z in direction v.
  RayTrace trace(const Vec2 &z, const Vec2 &v) const {
    if (norm2(v) == 0.0)
      throw InvalidArgument("trace: zero velocity");
    if (!contains(z))
      throw PointOutsideDomain("trace: point (" + std::to_string(z.x) + ", " + std::to_string(z.y) +
                               ") is not strictly inside the domain");
    std::pair<Real, Real> roots;
    if (const auto *e = std::get_if<EllipseSpec>(&spec_))
      roots = ellipse_roots(*e, z, v);
    else
      roots = bracketed_roots(z, v);
    return make_trace(z, v, roots.first, roots.second);
  }

  /// Same as trace() but always uses bracketing plus refinement on the level
  /// function, regardless of domain kind.
  RayTrace trace_bracketed(const Vec2 &z, const Vec2 &v) const {
    if (norm2(v) == 0.0)
      throw InvalidArgument("trace: zero velocity");
    if (!contains(z))
      throw PointOutsideDomain("trace: point outside domain");
    const auto r = bracketed_roots(z, v);
    return make_trace(z, v, r.first, r.second);
  }

  BoundaryPartition boundary_partition(const Vec2 &v) const {
    if (norm2(v) == 0.0)
      throw InvalidArgument("boundary_partition: zero velocity");
    constexpr int n = 2048;
    auto g = [&](Real t) { return dot(v, inward_normal(t)); };
    std::vector<Real> vals(n);
    for (int k = 0; k < n; ++k)
      vals[k] = g(static_cast<Real>(k) / n);
    std::vector<std::pair<Real, bool>> roots; // (t, rising)
    for (int k = 0; k < n; ++k) {
      const Real a = vals[k], b = vals[(k + 1) % n];
      if ((a > 0.0) == (b > 0.0))
        continue;
      const Real t0 = static_cast<Real>(k) / n, t1 = static_cast<Real>(k + 1) / n;
      roots.push_back({refine_root(g, t0, t1), b > 0.0});
    }
    if (roots.size() != 2)
      throw DegenerateBoundary("expected 2 tangency points, found " + std::to_string(roots.size()));
    const Real rise = roots[0].second ? roots[0].first : roots[1].first;
    const Real fall = roots[0].second ? roots[1].first : roots[0].first;
    BoundaryPartition bp;
    bp.arc_in = {rise, fall > rise ? fall : fall + 1.0};
    bp.arc_out = {fall, rise > fall ? rise : rise + 1.0};
    bp.tangency_t = {wrap_unit(rise), wrap_unit(fall)};
    bp.tangency_points = {point(bp.tangency_t[0]), point(bp.tangency_t[1])};
    return bp;
  }

  /// Arc length by adaptive Simpson quadrature of |Z'(t)|.
  Real boundary_measure(const Arc &arc, Real rel_tol = 1e-10) const {
    auto f = [&](Real t) { return speed(t); };
    // A coarse composite estimate sets the absolute target.
    Real rough = 0.0;
    constexpr int coarse = 64;
    const Real dt = arc.length() / coarse;
    for (int k = 0; k < coarse; ++k)
      rough += f(arc.begin + (k + 0.5) * dt) * dt;
    Real total = 0.0;
    for (int k = 0; k < coarse; ++k) {
      const Real a = arc.begin + k * dt, b = a + dt;
      const Real fa = f(a), fm = f(0.5 * (a + b)), fb = f(b);
      total += simpson(f, a, b, fa, fm, fb, (fa + 4 * fm + fb) * dt / 6.0,
                       rel_tol * std::abs(rough) / coarse, 40);
    }
    return total;
  }

  Real perimeter() const { return boundary_measure({0.0, 1.0}); }

  /// Boundary parameter of the point of ∂Ω nearest to z.
  Real nearest_boundary_param(const Vec2 &z) const {
    constexpr int n = 512;
    int best = 0;
    Real best_d = std::numeric_limits<Real>::infinity();
    for (int k = 0; k < n; ++k) {
      const Real d = norm2(point(static_cast<Real>(k) / n) - z);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    auto g = [&](Real t) { return dot(point(t) - z, tangent(t)); };
    const Real t0 = static_cast<Real>(best - 1) / n, t1 = static_cast<Real>(best + 1) / n;
    if ((g(t0) > 0.0) == (g(t1) > 0.0))
      return wrap_unit(static_cast<Real>(best) / n);
    return wrap_unit(refine_root(g, t0, t1));
  }

private:
  DomainSpec spec_;
  Vec2 lo_, hi_;
  Real diameter_ = 0.0;
  Real min_curvature_ = 0.0;

  template <class F>
  static Real refine_root(F &&g, Real a, Real b) {
    Real ga = g(a), gb = g(b);
    if (ga == 0.0)
      return a;
    if (gb == 0.0)
      return b;
    // A root at a bracket end can show up as a rounding-level value of
    // either sign; the endpoint closest to zero is then the root.
    if ((ga > 0.0) == (gb > 0.0))
      return std::abs(ga) <= std::abs(gb) ? a : b;
    std::uintmax_t iters = 200;
    const auto r = boost::math::tools::toms748_solve(
        g, a, b, ga, gb, boost::math::tools::eps_tolerance<Real>(52), iters);
    if (iters >= 200)
      throw NoConvergence("root refinement stalled on the boundary");
    return 0.5 * (r.first + r.second);
  }

  template <class F>
  static Real simpson(F &f, Real a, Real b, Real fa, Real fm, Real fb, Real whole, Real eps,
                      int depth) {
    const Real m = 0.5 * (a + b), lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const Real flm = f(lm), frm = f(rm);
    const Real left = (fa + 4 * flm + fm) * (m - a) / 6.0;
    const Real right = (fm + 4 * frm + fb) * (b - m) / 6.0;
    const Real delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * eps)
      return left + right + delta / 15.0;
    return simpson(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) +
           simpson(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1);
  }

  RayTrace make_trace(const Vec2 &z, const Vec2 &v, Real s_plus, Real s_minus) const {
    RayTrace r;
    r.s_plus = s_plus;
    r.s_minus = s_minus;
    r.z_plus = z - s_plus * v;
    r.z_minus = z + s_minus * v;
    r.t_plus = param_of(r.z_plus);
    r.t_minus = param_of(r.z_minus);
    return r;
  }

  std::pair<Real, Real> bracketed_roots(const Vec2 &z, const Vec2 &v) const {
    const Real smax = 1.01 * diameter_ / norm(v) + 1e-300;
    auto g_fwd = [&](Real s) { return level(z + s * v); };
    auto g_bwd = [&](Real s) { return level(z - s * v); };
    if (!(g_fwd(smax) > 0.0) || !(g_bwd(smax) > 0.0))
      throw NoConvergence("trace: could not bracket the boundary");
    const Real s_minus = refine_root(g_fwd, 0.0, smax);
    const Real s_plus = refine_root(g_bwd, 0.0, smax);
    return {s_plus, s_minus};
  }

  static std::pair<Real, Real> ellipse_roots(const EllipseSpec &e, const Vec2 &z, const Vec2 &v) {
    const Vec2 q = rotate(z - e.center, -e.rotation);
    const Vec2 w = rotate(v, -e.rotation);
    const Real ia = 1.0 / (e.a * e.a), ib = 1.0 / (e.b * e.b);
    const Real A = w.x * w.x * ia + w.y * w.y * ib;
    const Real B = 2.0 * (q.x * w.x * ia + q.y * w.y * ib);
    const Real C = q.x * q.x * ia + q.y * q.y * ib - 1.0;
    const Real disc = std::sqrt(std::max(0.0, B * B - 4.0 * A * C));
    const Real r1 = (-B - std::copysign(disc, B)) / (2.0 * A);
    const Real r2 = C / (A * r1);
    const Real fwd = std::max(r1, r2), bwd = std::min(r1, r2);
    return {-bwd, fwd};
  }

  // -- per-kind geometry, in the domain's local (unrotated, centered) frame --

  static void check_spec(const EllipseSpec &s) {
    if (!(s.a > 0.0) || !(s.b > 0.0))
      throw InvalidArgument("ellipse semi-axes must be positive");
  }
  static void check_spec(const HarmonicSpec &s) {
    if (!(s.radius > 0.0) || !(s.amplitude >= 0.0) || !(s.amplitude < 1.0) || s.mode < 1)
      throw InvalidArgument("harmonic domain needs radius > 0, 0 <= amplitude < 1, mode >= 1");
  }

  template <class S> static Vec2 to_local(const S &s, const Vec2 &z) {
    return rotate(z - s.center, -s.rotation);
  }

  static Vec2 local_point(const EllipseSpec &s, Real t) {
    const Real th = two_pi * t;
    return {s.a * std::cos(th), s.b * std::sin(th)};
  }
  static Vec2 local_d1(const EllipseSpec &s, Real t) {
    const Real th = two_pi * t;
    return two_pi * Vec2{-s.a * std::sin(th), s.b * std::cos(th)};
  }
  static Vec2 local_d2(const EllipseSpec &s, Real t) {
    return -(two_pi * two_pi) * local_point(s, t);
  }
  static Real local_level(const EllipseSpec &s, const Vec2 &q) {
    return (q.x / s.a) * (q.x / s.a) + (q.y / s.b) * (q.y / s.b) - 1.0;
  }
  static Real local_distance(const EllipseSpec &s, const Vec2 &q) {
    const Vec2 grad{2.0 * q.x / (s.a * s.a), 2.0 * q.y / (s.b * s.b)};
    const Real g = norm(grad);
    const Real l = local_level(s, q);
    return g > 0.0 ? l / g : l * std::min(s.a, s.b);
  }
  static Real local_param(const EllipseSpec &s, const Vec2 &q) {
    return wrap_unit(std::atan2(q.y / s.b, q.x / s.a) / two_pi);
  }

  static Real radius_of(const HarmonicSpec &s, Real th) {
    return s.radius * (1.0 + s.amplitude * std::cos(s.mode * th));
  }
  static Vec2 local_point(const HarmonicSpec &s, Real t) {
    const Real th = two_pi * t;
    const Real r = radius_of(s, th);
    return {r * std::cos(th), r * std::sin(th)};
  }
  static Vec2 local_d1(const HarmonicSpec &s, Real t) {
    const Real th = two_pi * t, c = std::cos(th), sn = std::sin(th);
    const Real r = radius_of(s, th);
    const Real r1 = -s.radius * s.amplitude * s.mode * std::sin(s.mode * th);
    return two_pi * Vec2{r1 * c - r * sn, r1 * sn + r * c};
  }
  static Vec2 local_d2(const HarmonicSpec &s, Real t) {
    const Real th = two_pi * t, c = std::cos(th), sn = std::sin(th);
    const Real r = radius_of(s, th);
    const Real r1 = -s.radius * s.amplitude * s.mode * std::sin(s.mode * th);
    const Real r2 = -s.radius * s.amplitude * s.mode * s.mode * std::cos(s.mode * th);
    return (two_pi * two_pi) * Vec2{r2 * c - 2.0 * r1 * sn - r * c, r2 * sn + 2.0 * r1 * c - r * sn};
  }
  static Real local_level(const HarmonicSpec &s, const Vec2 &q) {
    return norm(q) - radius_of(s, std::atan2(q.y, q.x));
  }
  static Real local_distance(const HarmonicSpec &s, const Vec2 &q) {
    const Real rq = norm(q);
    const Real th = std::atan2(q.y, q.x);
    const Real r1 = -s.radius * s.amplitude * s.mode * std::sin(s.mode * th);
    const Real slope = rq > 0.0 ? r1 / rq : 0.0;
    return local_level(s, q) / std::sqrt(1.0 + slope * slope);
  }
  static Real local_param(const HarmonicSpec &, const Vec2 &q) {
    return wrap_unit(std::atan2(q.y, q.x) / two_pi);
  }
};

/// A chord of Ω in direction v, labelled by its transverse coordinate.
struct Chord {
  Vec2 entry;
  Vec2 exit;
  Real length_s = 0.0; // parameter length: entry + length_s·v = exit
  Real t_entry = 0.0;
  Real t_exit = 0.0;
};

struct TransverseNode {
  Real w;
  Real weight;
};

/// All chords of Ω parallel to v, labelled by w = perp(v̂)·z. Integrals over
/// w use the substitution w = mid − half·cos θ with the midpoint rule in θ,
/// which removes the square-root behaviour of chord lengths at the tangency
/// points.
class ChordFamily {
public:
  ChordFamily(ConvexDomain &&, const Vec2 &) = delete;
  ChordFamily(const ConvexDomain &domain, const Vec2 &v)
      : domain_(&domain), v_(v), u_perp_(perp(normalized(v))),
        partition_(domain.boundary_partition(v)) {
    p0_ = partition_.tangency_points[0];
    p1_ = partition_.tangency_points[1];
    w0_ = dot(u_perp_, p0_);
    w1_ = dot(u_perp_, p1_);
  }

  const BoundaryPartition &partition() const { return partition_; }
  const Vec2 &velocity() const { return v_; }
  Real w_min() const { return std::min(w0_, w1_); }
  Real w_max() const { return std::max(w0_, w1_); }
  Real transverse(const Vec2 &z) const { return dot(u_perp_, z); }

  /// Chord at transverse coordinate w, strictly between the tangencies.
  Chord chord(Real w) const {
    const Real lam = (w - w0_) / (w1_ - w0_);
    const Vec2 anchor = p0_ + lam * (p1_ - p0_);
    const RayTrace r = domain_->trace(anchor, v_);
    return {r.z_plus, r.z_minus, r.s_plus + r.s_minus, r.t_plus, r.t_minus};
  }

  std::vector<TransverseNode> nodes(int n) const {
    std::vector<TransverseNode> out;
    out.reserve(n);
    const Real mid = 0.5 * (w_min() + w_max()), half = 0.5 * (w_max() - w_min());
    for (int r = 0; r < n; ++r) {
      const Real th = (r + 0.5) * std::numbers::pi / n;
      out.push_back({mid - half * std::cos(th), std::numbers::pi / n * half * std::sin(th)});
    }
    return out;
  }

private:
  const ConvexDomain *domain_;
  Vec2 v_;
  Vec2 u_perp_;
  BoundaryPartition partition_;
  Vec2 p0_, p1_;
  Real w0_ = 0.0, w1_ = 0.0;
};

} // namespace dvm
