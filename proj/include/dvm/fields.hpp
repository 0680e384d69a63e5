#pragma once

// Per-velocity densities on a uniform Cartesian lattice covering Ω.
//
// Off-lattice values use bilinear interpolation inside cells whose four
// corners lie in Ω. Cells cut by the boundary use a least-squares plane
// through the interior nodes of the surrounding 4x4 block (6x6 if that block
// is degenerate), so both rules are exact for affine fields and second-order
// accurate for smooth ones. Exterior node values are never read by
// interpolation.

#include "dvm/error.hpp"
#include "dvm/geometry.hpp"
#include "dvm/vec2.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace dvm {

using NodeIndex = std::uint32_t;

struct StencilEntry {
  NodeIndex node;
  Real weight;
};

class Grid {
public:
  /// Lattice of spacing h covering the bounding box of Ω plus `margin`
  /// (at least one spacing) on every side.
  // The grid refers to its domain, which must outlive it.
  Grid(ConvexDomain &&, Real, Real = 0.0) = delete;
  Grid(ConvexDomain &&, Vec2, Real, int, int, Real = 0.0) = delete;
  Grid(const ConvexDomain &domain, Real h, Real margin = 0.0) : domain_(&domain), h_(h) {
    if (!(h > 0.0))
      throw InvalidArgument("grid spacing must be positive");
    const Real pad = std::max(margin, 0.0) + h;
    origin_ = domain.lower() - Vec2{pad, pad};
    const Vec2 ext = domain.upper() - domain.lower();
    nx_ = static_cast<int>(std::ceil((ext.x + 2 * pad) / h)) + 1;
    ny_ = static_cast<int>(std::ceil((ext.y + 2 * pad) / h)) + 1;
    collar_depth_ = std::max(margin, 2.0 * h);
    build();
  }

  /// Explicit lattice: nodes origin + (ix, iy)·h for ix < nx, iy < ny.
  Grid(const ConvexDomain &domain, Vec2 origin, Real h, int nx, int ny, Real collar_depth = 0.0)
      : domain_(&domain), origin_(origin), h_(h), nx_(nx), ny_(ny),
        collar_depth_(std::max(collar_depth, 2.0 * h)) {
    if (!(h > 0.0) || nx < 2 || ny < 2)
      throw InvalidArgument("invalid explicit grid");
    build();
  }

  const ConvexDomain &domain() const { return *domain_; }
  Real spacing() const { return h_; }
  Vec2 origin() const { return origin_; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  std::size_t node_count() const { return static_cast<std::size_t>(nx_) * ny_; }
  NodeIndex index(int ix, int iy) const { return static_cast<NodeIndex>(iy * nx_ + ix); }
  Vec2 node(NodeIndex n) const {
    return origin_ + h_ * Vec2{static_cast<Real>(n % nx_), static_cast<Real>(n / nx_)};
  }
  bool interior(NodeIndex n) const { return interior_[n] != 0; }
  const std::vector<NodeIndex> &interior_nodes() const { return interior_list_; }

  /// Exterior nodes within collar_depth() of ∂Ω with their nearest boundary
  /// parameter; this is the normal-direction extension used by the mollifier.
  struct CollarNode {
    NodeIndex node;
    Real t;
  };
  const std::vector<CollarNode> &collar_nodes() const { return collar_; }
  Real collar_depth() const { return collar_depth_; }

  /// Calls value(node) for the stencil nodes of z and returns the
  /// interpolated value.
  template <class F> Real interpolate(const Vec2 &z, F &&value) const {
    return interpolate_in_cell(cell_of(z), z, value);
  }

  template <class F> Real interpolate_in_cell(int cell, const Vec2 &z, F &&value) const {
    const int cx = cell % (nx_ - 1), cy = cell / (nx_ - 1);
    const Real fx = (z.x - origin_.x) / h_ - cx, fy = (z.y - origin_.y) / h_ - cy;
    const int slot = cell_slot_[cell];
    if (slot == full_cell) {
      const NodeIndex n00 = index(cx, cy);
      const Real v00 = value(n00), v10 = value(n00 + 1);
      const Real v01 = value(n00 + nx_), v11 = value(n00 + nx_ + 1);
      return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
    }
    if (slot < 0)
      throw SegmentLeavesDomain("interpolation point (" + std::to_string(z.x) + ", " +
                                std::to_string(z.y) + ") is not covered by interior nodes");
    const LsCell &ls = ls_cells_[slot];
    Real acc = 0.0;
    for (std::size_t k = 0; k < ls.nodes.size(); ++k)
      acc += (ls.m0[k] + fx * ls.m1[k] + fy * ls.m2[k]) * value(ls.nodes[k]);
    return acc;
  }

  /// Interpolation weights at z (linear functional of the node values).
  std::vector<StencilEntry> stencil(const Vec2 &z) const {
    std::vector<StencilEntry> out;
    const int cell = cell_of(z);
    const int cx = cell % (nx_ - 1), cy = cell / (nx_ - 1);
    const Real fx = (z.x - origin_.x) / h_ - cx, fy = (z.y - origin_.y) / h_ - cy;
    const int slot = cell_slot_[cell];
    if (slot == full_cell) {
      const NodeIndex n00 = index(cx, cy);
      out = {{n00, (1 - fx) * (1 - fy)},
             {n00 + 1, fx * (1 - fy)},
             {static_cast<NodeIndex>(n00 + nx_), (1 - fx) * fy},
             {static_cast<NodeIndex>(n00 + nx_ + 1), fx * fy}};
      return out;
    }
    if (slot < 0)
      throw SegmentLeavesDomain("stencil point is not covered by interior nodes");
    const LsCell &ls = ls_cells_[slot];
    for (std::size_t k = 0; k < ls.nodes.size(); ++k)
      out.push_back({ls.nodes[k], ls.m0[k] + fx * ls.m1[k] + fy * ls.m2[k]});
    return out;
  }

  int cell_of(const Vec2 &z) const {
    const int cx = static_cast<int>(std::floor((z.x - origin_.x) / h_));
    const int cy = static_cast<int>(std::floor((z.y - origin_.y) / h_));
    if (cx < 0 || cy < 0 || cx >= nx_ - 1 || cy >= ny_ - 1)
      throw SegmentLeavesDomain("point outside the grid");
    return cy * (nx_ - 1) + cx;
  }

  bool same_layout(const Grid &o) const {
    return origin_ == o.origin_ && h_ == o.h_ && nx_ == o.nx_ && ny_ == o.ny_;
  }

private:
  static constexpr int full_cell = -1;
  static constexpr int uncovered = -2;

  struct LsCell {
    std::vector<NodeIndex> nodes;
    std::vector<Real> m0, m1, m2; // weight = m0 + fx·m1 + fy·m2
  };

  const ConvexDomain *domain_;
  Vec2 origin_;
  Real h_;
  int nx_ = 0, ny_ = 0;
  Real collar_depth_ = 0.0;
  std::vector<std::uint8_t> interior_;
  std::vector<NodeIndex> interior_list_;
  std::vector<int> cell_slot_;
  std::vector<LsCell> ls_cells_;
  std::vector<CollarNode> collar_;

  void build() {
    interior_.assign(node_count(), 0);
    for (NodeIndex n = 0; n < node_count(); ++n) {
      const Real d = domain_->signed_distance(node(n));
      if (d < -domain_->collar()) {
        interior_[n] = 1;
        interior_list_.push_back(n);
      } else if (d <= collar_depth_ + h_) {
        collar_.push_back({n, domain_->nearest_boundary_param(node(n))});
      }
    }
    if (interior_list_.empty())
      throw InvalidArgument("grid has no interior nodes");

    cell_slot_.assign(static_cast<std::size_t>(nx_ - 1) * (ny_ - 1), uncovered);
    for (int cy = 0; cy + 1 < ny_; ++cy) {
      for (int cx = 0; cx + 1 < nx_; ++cx) {
        const int cell = cy * (nx_ - 1) + cx;
        const NodeIndex n00 = index(cx, cy);
        if (interior_[n00] && interior_[n00 + 1] && interior_[n00 + nx_] && interior_[n00 + nx_ + 1]) {
          cell_slot_[cell] = full_cell;
          continue;
        }
        // Only cells that can contain points of the closed domain matter.
        const Vec2 centre = origin_ + h_ * Vec2{cx + 0.5, cy + 0.5};
        if (domain_->signed_distance(centre) > h_)
          continue;
        for (int reach : {1, 2, 3, 4}) {
          LsCell ls;
          if (fit_plane(cx, cy, reach, ls)) {
            cell_slot_[cell] = static_cast<int>(ls_cells_.size());
            ls_cells_.push_back(std::move(ls));
            break;
          }
        }
      }
    }
  }

  bool fit_plane(int cx, int cy, int reach, LsCell &ls) const {
    std::vector<Vec2> local;
    for (int iy = cy - reach + 1; iy <= cy + reach; ++iy)
      for (int ix = cx - reach + 1; ix <= cx + reach; ++ix) {
        if (ix < 0 || iy < 0 || ix >= nx_ || iy >= ny_)
          continue;
        const NodeIndex n = index(ix, iy);
        if (!interior_[n])
          continue;
        ls.nodes.push_back(n);
        local.push_back({static_cast<Real>(ix - cx), static_cast<Real>(iy - cy)});
      }
    if (ls.nodes.size() < 3)
      return false;
    Eigen::MatrixXd a(ls.nodes.size(), 3);
    for (std::size_t k = 0; k < local.size(); ++k)
      a.row(static_cast<Eigen::Index>(k)) << 1.0, local[k].x, local[k].y;
    const Eigen::Matrix3d ata = a.transpose() * a;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(ata);
    if (eig.eigenvalues()(0) < 1e-8 * eig.eigenvalues()(2))
      return false;
    const Eigen::MatrixXd m = ata.inverse() * a.transpose();
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
      ls.m0.push_back(m(0, k));
      ls.m1.push_back(m(1, k));
      ls.m2.push_back(m(2, k));
    }
    return true;
  }
};

using GridPtr = std::shared_ptr<const Grid>;

/// Per-velocity scalar fields on a Grid, stored species-major. Values at
/// exterior nodes are kept at zero.
class DensityField {
public:
  DensityField() = default;
  DensityField(GridPtr grid, int p, Real fill = 0.0)
      : grid_(std::move(grid)), p_(p), data_(static_cast<std::size_t>(p) * grid_->node_count(), 0.0) {
    if (fill != 0.0)
      for (int i = 0; i < p_; ++i)
        for (NodeIndex n : grid_->interior_nodes())
          at(i, n) = fill;
  }

  /// Fills every interior node of every species with g(i, z).
  template <class G> static DensityField from_function(GridPtr grid, int p, G &&g) {
    DensityField f(grid, p);
    for (int i = 0; i < p; ++i)
      for (NodeIndex n : grid->interior_nodes())
        f.at(i, n) = g(i, grid->node(n));
    return f;
  }

  const Grid &grid() const { return *grid_; }
  const GridPtr &grid_ptr() const { return grid_; }
  int species() const { return p_; }
  bool empty() const { return p_ == 0; }

  Real &at(int i, NodeIndex n) { return data_[offset(i) + n]; }
  Real at(int i, NodeIndex n) const { return data_[offset(i) + n]; }
  std::span<const Real> component(int i) const {
    return {data_.data() + offset(i), grid_->node_count()};
  }
  std::span<Real> component(int i) { return {data_.data() + offset(i), grid_->node_count()}; }
  const std::vector<Real> &raw() const { return data_; }

  Real sample(int i, const Vec2 &z) const {
    const Real *c = data_.data() + offset(i);
    return grid_->interpolate(z, [c](NodeIndex n) { return c[n]; });
  }

  /// Throws InvariantViolation naming the first negative or non-finite node.
  void check_nonnegative() const {
    for (int i = 0; i < p_; ++i)
      for (NodeIndex n : grid_->interior_nodes()) {
        const Real v = at(i, n);
        if (!(v >= 0.0) || !std::isfinite(v)) {
          const Vec2 z = grid_->node(n);
          throw InvariantViolation("field value " + std::to_string(v) + " at node " +
                                   std::to_string(n) + " (x=" + std::to_string(z.x) +
                                   ", y=" + std::to_string(z.y) + "), velocity " +
                                   std::to_string(i + 1));
        }
      }
  }

  friend bool operator==(const DensityField &a, const DensityField &b) {
    return a.p_ == b.p_ && a.data_ == b.data_;
  }

private:
  GridPtr grid_;
  int p_ = 0;
  std::vector<Real> data_;

  std::size_t offset(int i) const { return static_cast<std::size_t>(i) * grid_->node_count(); }
};

/// Relative L¹ distance over interior nodes and species, Σ|a−b| / Σ|b|.
inline Real relative_l1(const DensityField &a, const DensityField &b) {
  Real num = 0.0, den = 0.0;
  for (int i = 0; i < a.species(); ++i)
    for (NodeIndex n : a.grid().interior_nodes()) {
      num += std::abs(a.at(i, n) - b.at(i, n));
      den += std::abs(b.at(i, n));
    }
  return den > 0.0 ? num / den : num;
}

/// Absolute L¹ distance, node quadrature (Σ|a−b| h²).
inline Real l1_distance(const DensityField &a, const DensityField &b) {
  Real num = 0.0;
  for (int i = 0; i < a.species(); ++i)
    for (NodeIndex n : a.grid().interior_nodes())
      num += std::abs(a.at(i, n) - b.at(i, n));
  const Real h = a.grid().spacing();
  return num * h * h;
}

namespace detail {

/// Breakpoints of the segment z + s v, s in [s0, s1], at grid lines.
inline std::vector<Real> cell_breaks(const Grid &grid, const Vec2 &z, const Vec2 &v, Real s0,
                                     Real s1) {
  std::vector<Real> br{s0, s1};
  const Real h = grid.spacing();
  const Vec2 o = grid.origin();
  auto add_axis = [&](Real z0, Real vc, Real oc) {
    if (vc == 0.0)
      return;
    const Real a = (z0 + s0 * vc - oc) / h, b = (z0 + s1 * vc - oc) / h;
    const long k0 = static_cast<long>(std::floor(std::min(a, b))) + 1;
    const long k1 = static_cast<long>(std::ceil(std::max(a, b))) - 1;
    for (long k = k0; k <= k1; ++k)
      br.push_back((oc + k * h - z0) / vc);
  };
  add_axis(z.x, v.x, o.x);
  add_axis(z.y, v.y, o.y);
  std::sort(br.begin(), br.end());
  std::vector<Real> out;
  const Real eps = 1e-13 * std::max(std::abs(s1 - s0), 1e-300);
  for (Real s : br)
    if (s >= s0 && s <= s1 && (out.empty() || s - out.back() > eps))
      out.push_back(s);
  if (out.back() < s1)
    out.back() = s1;
  return out;
}

} // namespace detail

/// ∫_{s0}^{s1} g(z + s v) ds for the interpolated field, integrated exactly
/// (Simpson per grid cell, where the interpolant is quadratic along the
/// segment). Summation runs left to right.
inline Real line_integral(const DensityField &field, int i, const Vec2 &z, const Vec2 &v, Real s0,
                          Real s1) {
  const Grid &grid = field.grid();
  const ConvexDomain &dom = grid.domain();
  const Real tol = 1e-9 * dom.diameter();
  if (dom.signed_distance(z + s0 * v) > tol || dom.signed_distance(z + s1 * v) > tol)
    throw SegmentLeavesDomain("line integral segment leaves the domain");
  if (s0 == s1)
    return 0.0;
  const Real sign = s1 > s0 ? 1.0 : -1.0;
  const Real lo = std::min(s0, s1), hi = std::max(s0, s1);
  const auto comp = field.component(i);
  auto value = [&](NodeIndex n) { return comp[n]; };
  const auto br = detail::cell_breaks(grid, z, v, lo, hi);
  Real acc = 0.0;
  for (std::size_t k = 0; k + 1 < br.size(); ++k) {
    const Real a = br[k], b = br[k + 1], m = 0.5 * (a + b);
    const int cell = grid.cell_of(z + m * v);
    const Real fa = grid.interpolate_in_cell(cell, z + a * v, value);
    const Real fm = grid.interpolate_in_cell(cell, z + m * v, value);
    const Real fb = grid.interpolate_in_cell(cell, z + b * v, value);
    acc += (b - a) * (fa + 4.0 * fm + fb) / 6.0;
  }
  return sign * acc;
}

/// Discrete radial bump ψ(r) ∝ exp(−1/(1−(r/α)²)) on lattice offsets, unit mass.
struct MollifierKernel {
  struct Tap {
    int dx, dy;
    Real w;
  };
  std::vector<Tap> taps;

  MollifierKernel(Real alpha, Real h) {
    const int r = static_cast<int>(std::floor(alpha / h));
    Real total = 0.0;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        const Real q = h * std::hypot(dx, dy) / alpha;
        if (q >= 1.0)
          continue;
        const Real w = std::exp(-1.0 / (1.0 - q * q));
        taps.push_back({dx, dy, w});
        total += w;
      }
    for (auto &t : taps)
      t.w /= total;
  }
};

/// Convolution with the radial bump of radius α. Exterior nodes within α of
/// ∂Ω first receive the field value at their nearest boundary point.
inline DensityField mollify(const DensityField &field, Real alpha) {
  const Grid &grid = field.grid();
  const Real h = grid.spacing();
  if (!(alpha >= 2.0 * h))
    throw AlphaTooSmall("mollifier radius " + std::to_string(alpha) + " is below 2h = " +
                        std::to_string(2.0 * h));
  if (alpha > grid.collar_depth() + 1e-12)
    throw InvalidArgument("grid collar is narrower than the mollifier radius");
  const MollifierKernel kernel(alpha, h);
  const ConvexDomain &dom = grid.domain();
  DensityField extended = field;
  for (int i = 0; i < field.species(); ++i)
    for (const auto &c : grid.collar_nodes())
      extended.at(i, c.node) = field.sample(i, dom.point(c.t));

  DensityField out(field.grid_ptr(), field.species());
  const int nx = grid.nx(), ny = grid.ny();
  for (int i = 0; i < field.species(); ++i) {
    const auto src = extended.component(i);
    auto dst = out.component(i);
    for (NodeIndex n : grid.interior_nodes()) {
      const int ix = static_cast<int>(n % nx), iy = static_cast<int>(n / nx);
      Real acc = 0.0;
      for (const auto &t : kernel.taps) {
        const int jx = ix + t.dx, jy = iy + t.dy;
        if (jx < 0 || jy < 0 || jx >= nx || jy >= ny)
          throw InvalidArgument("mollifier stencil leaves the grid");
        acc += t.w * src[grid.index(jx, jy)];
      }
      dst[n] = std::max(acc, 0.0);
    }
  }
  return out;
}

/// Precomputed quadrature for ∫_Ω g dz: chords parallel to the x axis with a
/// cosine-substituted midpoint rule across chords and Simpson's rule along
/// each chord at spacing ≤ h.
class DomainQuadrature {
public:
  DomainQuadrature(const ConvexDomain &domain, Real h) {
    const ChordFamily family(domain, {1.0, 0.0});
    const int rows = std::max(16, static_cast<int>(std::ceil((family.w_max() - family.w_min()) / h)));
    for (const auto &tn : family.nodes(rows)) {
      const Chord c = family.chord(tn.w);
      const Real len = c.length_s;
      const int n = 2 * std::max(1, static_cast<int>(std::ceil(0.5 * len / h)));
      for (int k = 0; k <= n; ++k) {
        const Real wk = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
        points_.push_back(c.entry + (len * k / n) * Vec2{1.0, 0.0});
        weights_.push_back(tn.weight * wk * len / (3.0 * n));
      }
    }
  }

  const std::vector<Vec2> &points() const { return points_; }
  const std::vector<Real> &weights() const { return weights_; }

  template <class G> Real integrate(G &&g) const {
    Real acc = 0.0;
    for (std::size_t q = 0; q < points_.size(); ++q)
      acc += weights_[q] * g(points_[q]);
    return acc;
  }

private:
  std::vector<Vec2> points_;
  std::vector<Real> weights_;
};

/// Sentinel for "no truncation": T(x) = x/(1+x/k) reduces to x.
inline constexpr Real k_infinity = std::numeric_limits<Real>::infinity();

/// Periodic piecewise-linear table over the boundary parameter.
struct BoundaryTable {
  std::vector<Real> t;
  std::vector<Real> value;

  bool empty() const { return t.empty(); }

  Real eval(Real s) const {
    if (t.empty())
      return 0.0;
    if (t.size() == 1)
      return value[0];
    s = wrap_unit(s);
    const auto it = std::upper_bound(t.begin(), t.end(), s);
    std::size_t hi = static_cast<std::size_t>(it - t.begin());
    std::size_t lo;
    Real t_lo, t_hi;
    if (hi == 0 || hi == t.size()) {
      lo = t.size() - 1;
      hi = 0;
      t_lo = t[lo];
      t_hi = t[0] + 1.0;
      if (s < t_lo)
        s += 1.0;
    } else {
      lo = hi - 1;
      t_lo = t[lo];
      t_hi = t[hi];
    }
    const Real f = (s - t_lo) / (t_hi - t_lo);
    return (1.0 - f) * value[lo] + f * value[hi];
  }
};

/// Ingoing boundary densities f_bi as tables over the boundary parameter.
class BoundaryData {
public:
  BoundaryData() = default;
  explicit BoundaryData(std::vector<BoundaryTable> tables) : tables_(std::move(tables)) {
    for (const auto &tb : tables_) {
      if (tb.t.size() != tb.value.size())
        throw InvalidArgument("boundary table size mismatch");
      for (std::size_t k = 0; k < tb.t.size(); ++k) {
        if (!(tb.value[k] >= 0.0) || !std::isfinite(tb.value[k]))
          throw InvalidArgument("boundary data must be finite and nonnegative");
        if (tb.t[k] < 0.0 || tb.t[k] >= 1.0 || (k > 0 && !(tb.t[k] > tb.t[k - 1])))
          throw InvalidArgument("boundary table parameters must increase within [0, 1)");
      }
    }
  }

  static BoundaryData constant(int p, Real c) {
    return BoundaryData(std::vector<BoundaryTable>(p, BoundaryTable{{0.0}, {c}}));
  }

  /// Tabulates g(i, t) at n uniform parameters.
  template <class G> static BoundaryData tabulate(int p, int n, G &&g) {
    std::vector<BoundaryTable> tables(p);
    for (int i = 0; i < p; ++i)
      for (int k = 0; k < n; ++k) {
        const Real t = static_cast<Real>(k) / n;
        tables[i].t.push_back(t);
        tables[i].value.push_back(g(i, t));
      }
    return BoundaryData(std::move(tables));
  }

  int species() const { return static_cast<int>(tables_.size()); }
  const BoundaryTable &table(int i) const { return tables_.at(i); }

  Real raw(int i, Real t) const { return tables_.at(i).eval(t); }

  /// f^k_bi(t) = (f_bi ∧ k/2) convolved along ∂Ω with a bump of arc radius
  /// 1/k; the raw table when k is the infinity sentinel.
  Real value(int i, Real t, Real k, const ConvexDomain &domain) const {
    if (std::isinf(k))
      return raw(i, t);
    constexpr int taps = 64;
    const Real cap = 0.5 * k;
    const Real radius = 1.0 / k;
    const Real dt_per_arc = 1.0 / domain.speed(t);
    Real acc = 0.0, total = 0.0;
    for (int q = 0; q < taps; ++q) {
      const Real x = -1.0 + (2.0 * q + 1.0) / taps; // midpoints of (-1, 1)
      const Real w = std::exp(-1.0 / (1.0 - x * x));
      acc += w * std::min(raw(i, t + x * radius * dt_per_arc), cap);
      total += w;
    }
    return acc / total;
  }

private:
  std::vector<BoundaryTable> tables_;
};

/// f^k_bi evaluated at the entry point z_i^+(z) of the characteristic.
inline Real ingoing_trace(const BoundaryData &bd, int i, const Vec2 &z, const Vec2 &v,
                          const ConvexDomain &domain, Real k = k_infinity) {
  return bd.value(i, domain.trace(z, v).t_plus, k, domain);
}

/// Reads `t,i,value` rows (one-based i, optional header) into tables for p
/// velocities.
inline BoundaryData parse_boundary_csv(std::istream &in, int p) {
  std::vector<BoundaryTable> tables(p);
  std::vector<std::vector<std::pair<Real, Real>>> rows(p);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#')
      continue;
    if (lineno == 1 && line.find_first_of("0123456789.-") != 0)
      continue; // header
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c))
      throw ParseError("boundary data line " + std::to_string(lineno) + ": expected t,i,value");
    try {
      const Real t = std::stod(a);
      const int i = std::stoi(b) - 1;
      const Real v = std::stod(c);
      if (i < 0 || i >= p)
        throw ParseError("boundary data line " + std::to_string(lineno) + ": velocity index out of range");
      rows[i].push_back({t, v});
    } catch (const std::logic_error &) {
      throw ParseError("boundary data line " + std::to_string(lineno) + ": malformed number");
    }
  }
  for (int i = 0; i < p; ++i) {
    std::sort(rows[i].begin(), rows[i].end());
    for (const auto &[t, v] : rows[i]) {
      tables[i].t.push_back(t);
      tables[i].value.push_back(v);
    }
  }
  try {
    return BoundaryData(std::move(tables));
  } catch (const InvalidArgument &e) {
    throw ParseError(std::string("boundary data: ") + e.what());
  }
}

inline BoundaryData load_boundary_csv(const std::string &path, int p) {
  std::ifstream in(path);
  if (!in)
    throw ParseError("cannot open boundary data file '" + path + "'");
  return parse_boundary_csv(in, p);
}

} // namespace dvm
