#pragma once

// Pointwise collision operators. With T(x) = x / (1 + x/k):
//   gain_i      = Σ Γ_ij^lm T(F_l) T(C_m)
//   frequency_i = Σ Γ_ij^lm T(C_j) / (1 + F_i/k)
//   net_i       = gain_i − F_i frequency_i
// where C is the convolved field (C = F for the undamped operator). The
// infinity sentinel for k turns T into the identity and gives the exact
// quadratic operator.

#include "dvm/error.hpp"
#include "dvm/fields.hpp"
#include "dvm/model.hpp"
#include "dvm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace dvm {

inline Real truncate(Real x, Real k) { return x / (1.0 + x / k); }

struct CollisionEval {
  DensityField gain;
  DensityField frequency;
  DensityField net;
};

/// Evaluates gain and frequency at one point from per-species values.
/// `f` and `c` have p entries; results are written to gain/freq (p entries).
inline void collision_at_point(std::span<const CollisionTerm> terms, std::span<const Real> f,
                               std::span<const Real> c, Real k, std::span<Real> gain,
                               std::span<Real> freq) {
  const std::size_t p = f.size();
  for (std::size_t i = 0; i < p; ++i)
    gain[i] = freq[i] = 0.0;
  for (const auto &t : terms) {
    gain[t.i] += t.gamma * truncate(f[t.l], k) * truncate(c[t.m], k);
    freq[t.i] += t.gamma * truncate(c[t.j], k);
  }
  for (std::size_t i = 0; i < p; ++i)
    freq[i] /= 1.0 + f[i] / k;
}

inline CollisionEval eval_truncated(const VelocityModel &model, const DensityField &F,
                                    const DensityField &Fconv, Real k, bool damped) {
  if (!(k > 0.0))
    throw InvalidArgument("truncation level must be positive");
  const DensityField &C = damped ? Fconv : F;
  const int p = model.size();
  if (F.species() != p || C.species() != p)
    throw InvalidArgument("field species count does not match the model");
  const auto terms = model.terms();
  const Grid &grid = F.grid();
  const auto &nodes = grid.interior_nodes();
  CollisionEval out{DensityField(F.grid_ptr(), p), DensityField(F.grid_ptr(), p),
                    DensityField(F.grid_ptr(), p)};
  parallel_for(nodes.size(), [&](std::size_t q) {
    const NodeIndex n = nodes[q];
    std::vector<Real> f(p), c(p), g(p), nu(p);
    for (int i = 0; i < p; ++i) {
      f[i] = F.at(i, n);
      c[i] = C.at(i, n);
      if (!std::isfinite(f[i]) || !std::isfinite(c[i]))
        throw NonfiniteValue("non-finite field value at node " + std::to_string(n));
    }
    collision_at_point(terms, f, c, k, g, nu);
    for (int i = 0; i < p; ++i) {
      out.gain.at(i, n) = g[i];
      out.frequency.at(i, n) = nu[i];
      out.net.at(i, n) = g[i] - f[i] * nu[i];
    }
  });
  return out;
}

/// Q_i(f, f) = Σ Γ_ij^lm (f_l f_m − f_i f_j).
inline CollisionEval eval_untruncated(const VelocityModel &model, const DensityField &f) {
  return eval_truncated(model, f, f, k_infinity, false);
}

struct EntropyDensity {
  Real value = 0.0;
  int clamps = 0;
};

/// Pointwise D̃_k: Σ Γ (a − b) ln(a/b), a = T(F_l)T(F_m), b = T(F_i)T(F_j).
/// Terms with a = b vanish; when exactly one of a, b is zero the log ratio is
/// clamped at ±700 and counted.
inline EntropyDensity entropy_density(std::span<const CollisionTerm> terms,
                                      std::span<const Real> f, Real k) {
  constexpr Real clamp = 700.0;
  EntropyDensity d;
  for (const auto &t : terms) {
    const Real a = truncate(f[t.l], k) * truncate(f[t.m], k);
    const Real b = truncate(f[t.i], k) * truncate(f[t.j], k);
    if (a == b)
      continue;
    Real lr;
    if (a > 0.0 && b > 0.0) {
      lr = std::log(a) - std::log(b);
    } else {
      lr = a > 0.0 ? clamp : -clamp;
      ++d.clamps;
    }
    d.value += t.gamma * (a - b) * std::clamp(lr, -clamp, clamp);
  }
  return d;
}

struct EntropyProduction {
  Real value = 0.0;
  int clamps = 0;
};

/// ∫_Ω D̃_k dz, evaluating the density on the interpolated field at each
/// quadrature point. Negative interpolated values are clipped to zero first.
inline EntropyProduction entropy_production(const VelocityModel &model, const DensityField &F,
                                            Real k, const DomainQuadrature &quad) {
  const auto terms = model.terms();
  const int p = model.size();
  const auto &pts = quad.points();
  std::vector<Real> dens(pts.size());
  std::vector<int> clamps(pts.size());
  parallel_for(pts.size(), [&](std::size_t q) {
    std::vector<Real> f(p);
    for (int i = 0; i < p; ++i)
      f[i] = std::max(0.0, F.sample(i, pts[q]));
    const auto d = entropy_density(terms, f, k);
    dens[q] = d.value;
    clamps[q] = d.clamps;
  });
  EntropyProduction out;
  for (std::size_t q = 0; q < pts.size(); ++q) {
    out.value += quad.weights()[q] * dens[q];
    out.clamps += clamps[q];
  }
  return out;
}

} // namespace dvm
