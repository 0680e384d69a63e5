#pragma once

// Discrete velocity models: velocities in the plane plus the collision
// coefficient tensor, with the checks that certify a model as usable
// (symmetry, conservation, normality, transversality of interacting pairs).

#include "dvm/error.hpp"
#include "dvm/vec2.hpp"

#include <Eigen/SVD>
#include <boost/multiprecision/cpp_int.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace dvm {

/// Collision index quadruple (i, j; l, m), zero-based.
using Quad = std::array<int, 4>;

/// One positive coefficient of the collision tensor, flattened for fast loops.
struct CollisionTerm {
  int i, j, l, m;
  Real gamma;
};

struct VelocityModel {
  std::vector<Vec2> velocities;
  std::map<Quad, Real> gamma;

  int size() const { return static_cast<int>(velocities.size()); }

  Real gamma_max() const {
    Real g = 0.0;
    for (const auto &[q, v] : gamma)
      g = std::max(g, v);
    return g;
  }

  /// Positive entries in lexicographic (i, j, l, m) order.
  std::vector<CollisionTerm> terms() const {
    std::vector<CollisionTerm> out;
    for (const auto &[q, v] : gamma)
      if (v > 0.0)
        out.push_back({q[0], q[1], q[2], q[3], v});
    return out;
  }
};

/// The eight index images generated by Γ_ij^lm = Γ_ji^lm = Γ_lm^ij.
inline std::array<Quad, 8> symmetry_images(const Quad &q) {
  const auto [i, j, l, m] = q;
  return {{{i, j, l, m},
           {j, i, l, m},
           {i, j, m, l},
           {j, i, m, l},
           {l, m, i, j},
           {m, l, i, j},
           {l, m, j, i},
           {m, l, j, i}}};
}

/// Adds every missing symmetry image of the stored entries. Entries that are
/// already present keep their value, so inconsistent input stays visible to
/// validate_model instead of being overwritten.
inline VelocityModel close_symmetry(VelocityModel model) {
  const auto stored = model.gamma;
  for (const auto &[q, v] : stored)
    for (const auto &img : symmetry_images(q))
      model.gamma.emplace(img, v);
  return model;
}

struct Finding {
  std::string check;
  std::string detail;
  std::vector<int> indices; // one-based, matching the model file
};

struct ModelCertificate {
  bool normal = false;
  int invariant_kernel_dim = 0;
  int invariant_span_rank = 0;
  bool representable = false;
  bool exact_arithmetic = false;
  Real eta = 0.0;
  std::vector<Finding> violations;

  bool has(const std::string &check) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const Finding &f) { return f.check == check; });
  }
  /// Hypotheses needed downstream: a well-formed, normal model whose
  /// interacting pairs are never colinear.
  bool certified() const { return violations.empty() && normal && eta > 0.0; }
};

namespace detail {

using Rational = boost::multiprecision::cpp_rational;
using RationalMatrix = std::vector<std::vector<Rational>>;

/// Row-reduces in place; returns the pivot columns.
inline std::vector<int> row_reduce(RationalMatrix &a, int cols) {
  std::vector<int> pivots;
  std::size_t row = 0;
  for (int c = 0; c < cols && row < a.size(); ++c) {
    std::size_t piv = row;
    while (piv < a.size() && a[piv][c] == 0)
      ++piv;
    if (piv == a.size())
      continue;
    std::swap(a[row], a[piv]);
    const Rational inv = 1 / a[row][c];
    for (auto &x : a[row])
      x *= inv;
    for (std::size_t r = 0; r < a.size(); ++r) {
      if (r == row || a[r][c] == 0)
        continue;
      const Rational f = a[r][c];
      for (int k = 0; k < cols; ++k)
        a[r][k] -= f * a[row][k];
    }
    pivots.push_back(c);
    ++row;
  }
  return pivots;
}

/// Null-space basis (columns) of an exact matrix with `cols` columns.
inline std::vector<std::vector<Rational>> null_space(RationalMatrix a, int cols) {
  const auto pivots = row_reduce(a, cols);
  std::vector<bool> is_pivot(cols, false);
  for (int c : pivots)
    is_pivot[c] = true;
  std::vector<std::vector<Rational>> basis;
  for (int free = 0; free < cols; ++free) {
    if (is_pivot[free])
      continue;
    std::vector<Rational> v(cols, Rational(0));
    v[free] = 1;
    for (std::size_t r = 0; r < pivots.size(); ++r)
      v[pivots[r]] = -a[r][free];
    basis.push_back(std::move(v));
  }
  return basis;
}

inline int exact_rank(RationalMatrix a, int cols) {
  return static_cast<int>(row_reduce(a, cols).size());
}

inline int float_rank(const Eigen::MatrixXd &a, double rel_threshold) {
  if (a.size() == 0)
    return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto &s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0)
    return 0;
  int r = 0;
  for (Eigen::Index k = 0; k < s.size(); ++k)
    if (s(k) > rel_threshold * s(0))
      ++r;
  return r;
}

/// True when the value is a small-denominator dyadic rational, i.e. the user
/// almost certainly meant it exactly.
inline bool looks_exact(Real x) {
  const Real scaled = x * 1024.0;
  return std::abs(scaled) < 1e15 && scaled == std::floor(scaled);
}

inline std::string quad_str(const Quad &q) {
  std::ostringstream s;
  s << "(" << q[0] + 1 << "," << q[1] + 1 << ";" << q[2] + 1 << "," << q[3] + 1 << ")";
  return s.str();
}

} // namespace detail

/// Certifies a model. Structural problems are reported as findings, never
/// repaired. `tol` is relative to the model's velocity and Γ scales.
inline ModelCertificate validate_model(const VelocityModel &model, Real tol = 1e-12) {
  ModelCertificate cert;
  const int p = model.size();

  for (const auto &[q, v] : model.gamma)
    for (int idx : q)
      if (idx < 0 || idx >= p)
        throw InvalidArgument("collision index out of range in " + detail::quad_str(q));

  Real vscale = 0.0;
  for (int i = 0; i < p; ++i) {
    const Vec2 &v = model.velocities[i];
    vscale = std::max(vscale, norm2(v));
    if (v.x == 0.0 && v.y == 0.0)
      cert.violations.push_back({"zero_velocity", "velocity is the zero vector", {i + 1}});
    for (int j = 0; j < i; ++j)
      if (model.velocities[j] == v)
        cert.violations.push_back({"duplicate_velocity", "velocities coincide", {j + 1, i + 1}});
  }
  vscale = std::max(vscale, std::numeric_limits<Real>::min());

  const Real gscale = std::max(model.gamma_max(), std::numeric_limits<Real>::min());
  for (const auto &[q, v] : model.gamma) {
    if (v < 0.0)
      cert.violations.push_back(
          {"negative_gamma", "coefficient " + detail::quad_str(q) + " is negative",
           {q[0] + 1, q[1] + 1, q[2] + 1, q[3] + 1}});
    for (const auto &img : symmetry_images(q)) {
      const auto it = model.gamma.find(img);
      const Real w = it == model.gamma.end() ? 0.0 : it->second;
      if (std::abs(w - v) > tol * gscale) {
        cert.violations.push_back({"symmetry",
                                   "Γ" + detail::quad_str(q) + " differs from its image Γ" +
                                       detail::quad_str(img),
                                   {q[0] + 1, q[1] + 1, q[2] + 1, q[3] + 1}});
        break;
      }
    }
  }

  std::set<Quad> positive;
  for (const auto &[q, v] : model.gamma)
    if (v > 0.0)
      positive.insert(q);

  for (const auto &q : positive) {
    const auto [i, j, l, m] = q;
    const auto &V = model.velocities;
    const Vec2 dm = V[i] + V[j] - V[l] - V[m];
    const Real de = norm2(V[i]) + norm2(V[j]) - norm2(V[l]) - norm2(V[m]);
    const std::vector<int> ids{i + 1, j + 1, l + 1, m + 1};
    if (norm(dm) > tol * std::sqrt(vscale))
      cert.violations.push_back(
          {"conservation_momentum", "momentum not conserved in " + detail::quad_str(q), ids});
    if (std::abs(de) > tol * vscale)
      cert.violations.push_back(
          {"conservation_energy", "energy not conserved in " + detail::quad_str(q), ids});
  }

  // Transversality margin over interacting pairs.
  cert.eta = 1.0;
  std::set<std::pair<int, int>> pairs;
  for (const auto &q : positive)
    pairs.insert({std::min(q[0], q[1]), std::max(q[0], q[1])});
  for (const auto &[i, j] : pairs) {
    const Vec2 &a = model.velocities[i], &b = model.velocities[j];
    if (norm2(a) == 0.0 || norm2(b) == 0.0) {
      cert.eta = 0.0;
      continue;
    }
    const Real s = abs_sin(a, b);
    cert.eta = std::min(cert.eta, s);
    if (s == 0.0)
      cert.violations.push_back(
          {"colinear_interacting_pair", "interacting velocities are colinear", {i + 1, j + 1}});
  }

  // Collision invariants: kernel of {ψ_i + ψ_j − ψ_l − ψ_m = 0}. The system
  // matrix is integral, so its kernel is always computed exactly.
  detail::RationalMatrix system;
  {
    std::set<std::vector<int>> rows;
    for (const auto &q : positive) {
      std::vector<int> row(p, 0);
      row[q[0]] += 1;
      row[q[1]] += 1;
      row[q[2]] -= 1;
      row[q[3]] -= 1;
      rows.insert(row);
    }
    for (const auto &row : rows)
      system.emplace_back(row.begin(), row.end());
  }
  const auto kernel = detail::null_space(system, p);
  cert.invariant_kernel_dim = static_cast<int>(kernel.size());

  cert.exact_arithmetic = std::all_of(model.velocities.begin(), model.velocities.end(),
                                      [](const Vec2 &v) {
                                        return detail::looks_exact(v.x) && detail::looks_exact(v.y);
                                      });
  const int ncols = 4 + static_cast<int>(kernel.size());
  if (cert.exact_arithmetic) {
    detail::RationalMatrix span(p, std::vector<detail::Rational>(4));
    for (int i = 0; i < p; ++i) {
      const detail::Rational x(model.velocities[i].x), y(model.velocities[i].y);
      span[i] = {detail::Rational(1), x, y, x * x + y * y};
    }
    cert.invariant_span_rank = detail::exact_rank(span, 4);
    detail::RationalMatrix joint = span;
    for (int i = 0; i < p; ++i)
      for (const auto &k : kernel)
        joint[i].push_back(k[i]);
    cert.representable = detail::exact_rank(joint, ncols) == cert.invariant_span_rank;
  } else {
    Eigen::MatrixXd span(p, 4), joint(p, ncols);
    for (int i = 0; i < p; ++i) {
      const Vec2 &v = model.velocities[i];
      span.row(i) << 1.0, v.x, v.y, norm2(v);
      joint.block(i, 0, 1, 4) = span.row(i);
      for (std::size_t c = 0; c < kernel.size(); ++c)
        joint(i, 4 + static_cast<Eigen::Index>(c)) = kernel[c][i].convert_to<double>();
    }
    cert.invariant_span_rank = detail::float_rank(span, 1e-10);
    cert.representable = detail::float_rank(joint, 1e-10) == cert.invariant_span_rank;
  }
  cert.normal = cert.representable;
  if (!cert.normal)
    cert.violations.push_back({"not_normal",
                               "collision invariants exceed span{1, v, |v|^2} (kernel dim " +
                                   std::to_string(cert.invariant_kernel_dim) + ")",
                               {}});
  return cert;
}

struct InteractionSets {
  /// J_i: indices j such that Γ_ij^lm > 0 for some (l, m).
  std::vector<std::vector<int>> partners;
  /// Velocities that never collide; their density is the ingoing boundary value.
  std::vector<bool> free_streaming;
};

inline InteractionSets interacting_index_sets(const VelocityModel &model) {
  const int p = model.size();
  std::vector<std::set<int>> sets(p);
  for (const auto &[q, v] : model.gamma)
    if (v > 0.0)
      sets[q[0]].insert(q[1]);
  InteractionSets out;
  for (int i = 0; i < p; ++i) {
    out.partners.emplace_back(sets[i].begin(), sets[i].end());
    out.free_streaming.push_back(sets[i].empty());
  }
  return out;
}

/// Parses `{"velocities": [[x,y],...], "reactions": [[i,j,l,m,gamma],...]}`
/// with one-based indices and returns the symmetry-closed model.
inline VelocityModel parse_model(const std::string &text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    throw ParseError(std::string("model: ") + e.what());
  }
  VelocityModel model;
  try {
    if (!doc.contains("velocities") || !doc.at("velocities").is_array())
      throw ParseError("model: missing 'velocities' array");
    for (const auto &v : doc.at("velocities")) {
      if (!v.is_array() || v.size() != 2)
        throw ParseError("model: each velocity must be a pair");
      model.velocities.push_back({v.at(0).get<Real>(), v.at(1).get<Real>()});
    }
    const int p = model.size();
    if (p < 2)
      throw ParseError("model: at least two velocities are required");
    if (doc.contains("reactions")) {
      for (const auto &r : doc.at("reactions")) {
        if (!r.is_array() || r.size() != 5)
          throw ParseError("model: each reaction must be [i, j, l, m, gamma]");
        Quad q;
        for (int k = 0; k < 4; ++k) {
          q[k] = r.at(k).get<int>() - 1;
          if (q[k] < 0 || q[k] >= p)
            throw ParseError("model: reaction index out of range");
        }
        const Real g = r.at(4).get<Real>();
        if (!std::isfinite(g))
          throw ParseError("model: non-finite gamma");
        if (!model.gamma.emplace(q, g).second)
          throw ParseError("model: duplicate reaction " + detail::quad_str(q));
      }
    }
  } catch (const nlohmann::json::exception &e) {
    throw ParseError(std::string("model: ") + e.what());
  }
  return close_symmetry(std::move(model));
}

inline VelocityModel load_model(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ParseError("cannot open model file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

inline nlohmann::json to_json(const ModelCertificate &c) {
  nlohmann::json v = nlohmann::json::array();
  for (const auto &f : c.violations)
    v.push_back({{"check", f.check}, {"detail", f.detail}, {"indices", f.indices}});
  return {{"normal", c.normal},
          {"invariant_kernel_dim", c.invariant_kernel_dim},
          {"invariant_span_rank", c.invariant_span_rank},
          {"representable", c.representable},
          {"exact_arithmetic", c.exact_arithmetic},
          {"eta", c.eta},
          {"certified", c.certified()},
          {"violations", v}};
}

} // namespace dvm
