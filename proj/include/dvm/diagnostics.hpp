#pragma once

// A-priori quantities of a solved field: mass and entropy, boundary fluxes
// and their balance laws, entropy dissipation, the outgoing-flow and
// transverse-chord bounds, exceptional characteristic sets, residuals of the
// mild and exponential forms, and the L¹ translation modulus of the
// integrated collision frequency.
//
// Boundary integrals use |v·n| dσ = |v| dw over the chord family of v, with
// w the transverse coordinate.

#include "dvm/collision.hpp"
#include "dvm/error.hpp"
#include "dvm/fields.hpp"
#include "dvm/geometry.hpp"
#include "dvm/model.hpp"
#include "dvm/parallel.hpp"
#include "dvm/solver.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace dvm {

struct DiagnosticsOptions {
  std::vector<Real> eps{0.9, 0.7, 0.5};
  /// Equicontinuity shifts, as multiples of h.
  std::vector<int> shift_multiples{1, 2, 4};
  /// Samples per ingoing arc for transverse_max.
  int boundary_samples = 256;
  /// Chords per velocity for boundary fluxes and exceptional sets; 0 picks
  /// twice the number of grid lines across the domain.
  int chord_samples = 0;
  Real mild_residual_threshold = 1e-3;
};

struct ExceptionalEntry {
  int i = 0;
  Real eps = 0.0;
  Real measure = 0.0;
};

/// Translation modulus for velocity i, shifted along v_direction by
/// multiple·h.
struct EquicontinuityEntry {
  int i = 0;
  int direction = 0;
  int multiple = 0;
  Real shift = 0.0;
  Real value = 0.0;
};

struct DiagnosticsReport {
  Real k = 0.0;
  Real alpha = 0.0;
  Real mass = 0.0;
  Real entropy = 0.0;
  Real entropy_dissipation = 0.0;
  int clamp_flags = 0;
  std::vector<Real> inflow, outflow;
  Real inflow_total = 0.0, outflow_total = 0.0;
  /// Residuals and inflow scales for ψ = 1, v_x, v_y, |v|².
  std::array<Real, 4> flux_residuals{};
  std::array<Real, 4> flux_scales{};
  Real damped_mass_residual = 0.0;
  Real mild_residual_L1 = 0.0;
  Real expo_mild_gap = 0.0;
  Real outgoing_flow_control = 0.0;
  Real transverse_max = 0.0;
  std::vector<ExceptionalEntry> exceptional_measures;
  std::vector<EquicontinuityEntry> equicontinuity;
  std::vector<Real> stage_distances;
  int iterations = 0;
  bool converged = false;
};

inline int default_chord_samples(const Grid &grid) {
  const ConvexDomain &d = grid.domain();
  const Real width = std::max(d.upper().x - d.lower().x, d.upper().y - d.lower().y);
  return std::max(64, 2 * static_cast<int>(std::ceil(width / grid.spacing())));
}

/// (Σ_i ∫F_i, Σ_i ∫F_i ln F_i) with 0 ln 0 = 0; negative interpolated values
/// are clipped.
inline std::pair<Real, Real> mass_entropy(const DensityField &F, const DomainQuadrature &quad) {
  const auto &pts = quad.points();
  std::vector<Real> m(pts.size()), e(pts.size());
  parallel_for(pts.size(), [&](std::size_t q) {
    for (int i = 0; i < F.species(); ++i) {
      const Real f = std::max(0.0, F.sample(i, pts[q]));
      m[q] += f;
      if (f > 0.0)
        e[q] += f * std::log(f);
    }
  });
  Real mass = 0.0, ent = 0.0;
  for (std::size_t q = 0; q < pts.size(); ++q) {
    mass += quad.weights()[q] * m[q];
    ent += quad.weights()[q] * e[q];
  }
  return {mass, ent};
}

/// One-sided linear extrapolation to the exit point of a chord:
/// F(Z) ≈ 2F(Z − δv) − F(Z − 2δv), δ = min(h/|v|, s/2), clipped at zero.
inline Real outgoing_trace(const DensityField &F, int i, const Chord &c, const Vec2 &v) {
  const Real delta = std::min(F.grid().spacing() / norm(v), 0.5 * c.length_s);
  const Real a = F.sample(i, c.exit - delta * v);
  const Real b = F.sample(i, c.exit - (2.0 * delta) * v);
  return std::max(0.0, 2.0 * a - b);
}

/// Per-velocity boundary fluxes ∫_{∂Ω_i^±}|v_i·n| F_i dσ. The inflow uses
/// f^k_b; the outflow transports the converged field to the exit point with
/// the same exponential form the solver uses, so the balance laws are
/// discrete identities up to interpolation error.
struct BoundaryFluxes {
  std::vector<Real> inflow, outflow;
};

inline BoundaryFluxes boundary_fluxes(const TransportProblem &prob, const DensityField &F, Real alpha,
                                      Real k, Real mollifier_radius, int chord_samples) {
  const int p = prob.species();
  const auto fc = freeze_collision(prob, F, alpha, k, mollifier_radius);
  BoundaryFluxes out{std::vector<Real>(p), std::vector<Real>(p)};
  for (int i = 0; i < p; ++i) {
    const Vec2 v = prob.model().velocities[i];
    const ChordFamily fam(prob.domain(), v);
    const auto nodes = fam.nodes(chord_samples);
    std::vector<Real> in(nodes.size()), ex(nodes.size());
    parallel_for(nodes.size(), [&](std::size_t r) {
      const Chord c = fam.chord(nodes[r].w);
      in[r] = prob.boundary().value(i, c.t_entry, k, prob.domain());
      ex[r] = transport_value(prob, fc, i, c.exit, c.length_s, in[r]);
    });
    for (std::size_t r = 0; r < nodes.size(); ++r) {
      out.inflow[i] += nodes[r].weight * in[r];
      out.outflow[i] += nodes[r].weight * ex[r];
    }
    out.inflow[i] *= norm(v);
    out.outflow[i] *= norm(v);
  }
  return out;
}

inline std::array<Real, 4> collision_invariants(const Vec2 &v) { return {1.0, v.x, v.y, norm2(v)}; }

struct FluxBalance {
  std::array<Real, 4> residuals{};
  std::array<Real, 4> scales{};
};

/// α Σ_i ψ(v_i)∫F_i + Σ_i ψ(v_i)(outflow_i − inflow_i) for each invariant ψ;
/// scales are Σ_i |ψ(v_i)| inflow_i.
inline FluxBalance flux_balance(const VelocityModel &model, const std::vector<Real> &species_mass,
                                const BoundaryFluxes &fl, Real alpha) {
  FluxBalance b;
  for (int i = 0; i < model.size(); ++i) {
    const auto psi = collision_invariants(model.velocities[i]);
    for (int a = 0; a < 4; ++a) {
      b.residuals[a] += psi[a] * (alpha * species_mass[i] + fl.outflow[i] - fl.inflow[i]);
      b.scales[a] += std::abs(psi[a]) * fl.inflow[i];
    }
  }
  return b;
}

inline std::vector<Real> species_mass(const DensityField &F, const DomainQuadrature &quad) {
  std::vector<Real> out(F.species());
  for (int i = 0; i < F.species(); ++i)
    out[i] = quad.integrate([&](const Vec2 &z) { return std::max(0.0, F.sample(i, z)); });
  return out;
}

/// Φ_k(F) = F ln F for F ≤ k and ln(k/2) F above k, with 0 ln 0 = 0.
inline Real flow_control_density(Real f, Real k) {
  if (f > k)
    return std::log(k / 2.0) * f;
  return f > 0.0 ? f * std::log(f) : 0.0;
}

/// Σ_i ∫_{∂Ω_i^-} |v_i·n| Φ_k(F_i) dσ on the extrapolated outgoing trace.
inline Real outgoing_flow_control(const VelocityModel &model, const DensityField &F, Real k,
                                  int chord_samples) {
  const ConvexDomain &dom = F.grid().domain();
  Real total = 0.0;
  for (int i = 0; i < model.size(); ++i) {
    const Vec2 v = model.velocities[i];
    const ChordFamily fam(dom, v);
    const auto nodes = fam.nodes(chord_samples);
    std::vector<Real> val(nodes.size());
    parallel_for(nodes.size(), [&](std::size_t r) {
      val[r] = flow_control_density(outgoing_trace(F, i, fam.chord(nodes[r].w), v), k);
    });
    Real acc = 0.0;
    for (std::size_t r = 0; r < nodes.size(); ++r)
      acc += nodes[r].weight * val[r];
    total += norm(v) * acc;
  }
  return total;
}

/// Σ_j sin²(v_i, v_j) ∫_0^{s_i^-(Z)} F_j(Z + s v_i) ds for Z on the ingoing
/// arc of v_i, taken as the entry point of the chord through Z.
inline Real transverse_estimate(const VelocityModel &model, const DensityField &F, int i,
                                const Vec2 &Z) {
  const Vec2 v = model.velocities[i];
  const ChordFamily fam(F.grid().domain(), v);
  const Real w = fam.transverse(Z);
  if (!(w > fam.w_min() && w < fam.w_max()))
    return 0.0;
  const Chord c = fam.chord(w);
  Real acc = 0.0;
  for (int j = 0; j < model.size(); ++j) {
    const Real s = abs_sin(v, model.velocities[j]);
    if (s == 0.0)
      continue;
    acc += s * s * line_integral(F, j, c.entry, v, 0.0, c.length_s);
  }
  return acc;
}

/// Maximum of transverse_estimate over i and `samples` parameter-uniform
/// points of each ingoing arc.
inline Real transverse_max(const VelocityModel &model, const DensityField &F, int samples) {
  const ConvexDomain &dom = F.grid().domain();
  Real best = 0.0;
  for (int i = 0; i < model.size(); ++i) {
    const Arc arc = dom.boundary_partition(model.velocities[i]).arc_in;
    std::vector<Real> val(samples);
    parallel_for(static_cast<std::size_t>(samples), [&](std::size_t q) {
      const Real t = wrap_unit(arc.begin + (q + 0.5) / samples * arc.length());
      val[q] = transverse_estimate(model, F, i, dom.point(t));
    });
    for (Real x : val)
      best = std::max(best, x);
  }
  return best;
}

struct ExceptionalSet {
  Real measure = 0.0;
  /// Chord transverse coordinates and whether each chord is flagged.
  std::vector<Real> w;
  std::vector<bool> flagged;
};

/// Chords of direction v_i whose outgoing trace of F_i exceeds 1/ε², or along
/// which ∫F_j ds exceeds 1/ε² for some j in J_i. The measure is the flagged
/// area, Σ |v_i| s(w) dw.
inline ExceptionalSet exceptional_set(const VelocityModel &model, const DensityField &F, int i,
                                      Real eps, int chord_samples) {
  if (!(eps > 0.0 && eps <= 1.0))
    throw InvalidArgument("eps must lie in (0, 1]");
  const Real bound = 1.0 / (eps * eps);
  const auto partners = interacting_index_sets(model).partners[i];
  const Vec2 v = model.velocities[i];
  const ChordFamily fam(F.grid().domain(), v);
  const auto nodes = fam.nodes(chord_samples);
  ExceptionalSet out;
  out.w.resize(nodes.size());
  out.flagged.assign(nodes.size(), false);
  std::vector<Real> area(nodes.size());
  std::vector<char> flag(nodes.size());
  parallel_for(nodes.size(), [&](std::size_t r) {
    const Chord c = fam.chord(nodes[r].w);
    area[r] = norm(v) * c.length_s;
    bool hit = outgoing_trace(F, i, c, v) > bound;
    for (std::size_t q = 0; q < partners.size() && !hit; ++q)
      hit = line_integral(F, partners[q], c.entry, v, 0.0, c.length_s) > bound;
    flag[r] = hit;
  });
  for (std::size_t r = 0; r < nodes.size(); ++r) {
    out.w[r] = nodes[r].w;
    out.flagged[r] = flag[r] != 0;
    if (flag[r])
      out.measure += nodes[r].weight * area[r];
  }
  return out;
}

/// Σ_i Σ_z |f_i(z) − f_bi(z_i^+) − ∫_{−s_i^+}^0 Q_i(f,f)(z + s v_i) ds| h², with
/// the untruncated operator and raw boundary data.
inline Real mild_residual(const TransportProblem &prob, const DensityField &f) {
  const auto Q = eval_untruncated(prob.model(), f).net;
  const auto fb = prob.entry_values(k_infinity);
  const auto &nodes = prob.grid().interior_nodes();
  const std::size_t nn = nodes.size();
  std::vector<Real> r(static_cast<std::size_t>(prob.species()) * nn);
  parallel_for(r.size(), [&](std::size_t idx) {
    const int i = static_cast<int>(idx / nn);
    const std::size_t q = idx % nn;
    const Vec2 z = prob.grid().node(nodes[q]);
    const Real integral =
        line_integral(Q, i, z, prob.model().velocities[i], -prob.s_plus(i, q), 0.0);
    r[idx] = std::abs(f.at(i, nodes[q]) - fb[idx] - integral);
  });
  Real acc = 0.0;
  for (Real x : r)
    acc += x;
  const Real h = prob.grid().spacing();
  return acc * h * h;
}

/// Relative L¹ change of F under one exponential-form sweep.
inline Real expo_mild_gap(const TransportProblem &prob, const DensityField &F, Real alpha, Real k,
                          Real mollifier_radius) {
  return relative_l1(damped_sweep(prob, F, alpha, k, mollifier_radius), F);
}

/// L¹ modulus over nodes z with z + shift inside Ω of
/// |Φ(z + shift) − Φ(z)|, Φ(z) = ∫_{−s_i^+(z)}^0 ν_i^k(z + s v_i) ds and ν^k the
/// undamped truncated frequency of F.
inline Real equicontinuity_modulus(const TransportProblem &prob, const DensityField &frequency,
                                   int i, const Vec2 &shift) {
  const auto &nodes = prob.grid().interior_nodes();
  const ConvexDomain &dom = prob.domain();
  const Vec2 v = prob.model().velocities[i];
  std::vector<Real> d(nodes.size());
  if (shift == Vec2{})
    return 0.0;
  parallel_for(nodes.size(), [&](std::size_t q) {
    const Vec2 z = prob.grid().node(nodes[q]);
    const Vec2 zs = z + shift;
    if (dom.signed_distance(zs) >= -dom.collar())
      return;
    const Real phi = line_integral(frequency, i, z, v, -prob.s_plus(i, q), 0.0);
    const Real phis = line_integral(frequency, i, zs, v, -dom.trace(zs, v).s_plus, 0.0);
    d[q] = std::abs(phis - phi);
  });
  Real acc = 0.0;
  for (Real x : d)
    acc += x;
  const Real h = prob.grid().spacing();
  return acc * h * h;
}

inline DensityField undamped_frequency(const VelocityModel &model, const DensityField &F, Real k) {
  return eval_truncated(model, F, F, k, false).frequency;
}

/// Full report for a solved field at damping α, truncation k, mollifier
/// radius r.
inline DiagnosticsReport compute_diagnostics(const TransportProblem &prob, const DensityField &F,
                                             Real alpha, Real k, Real mollifier_radius,
                                             const DiagnosticsOptions &opt) {
  const VelocityModel &model = prob.model();
  const Grid &grid = prob.grid();
  const int chords = opt.chord_samples > 0 ? opt.chord_samples : default_chord_samples(grid);
  const DomainQuadrature quad(prob.domain(), grid.spacing());
  DiagnosticsReport rep;
  rep.k = k;
  rep.alpha = alpha;
  std::tie(rep.mass, rep.entropy) = mass_entropy(F, quad);
  const auto ep = entropy_production(model, F, k, quad);
  rep.entropy_dissipation = ep.value;
  rep.clamp_flags = ep.clamps;

  const auto fl = boundary_fluxes(prob, F, alpha, k, mollifier_radius, chords);
  rep.inflow = fl.inflow;
  rep.outflow = fl.outflow;
  for (int i = 0; i < model.size(); ++i) {
    rep.inflow_total += fl.inflow[i];
    rep.outflow_total += fl.outflow[i];
  }
  const auto bal = flux_balance(model, species_mass(F, quad), fl, alpha);
  rep.flux_residuals = bal.residuals;
  rep.flux_scales = bal.scales;
  rep.damped_mass_residual = bal.residuals[0];

  rep.mild_residual_L1 = mild_residual(prob, F);
  rep.expo_mild_gap = expo_mild_gap(prob, F, alpha, k, mollifier_radius);
  rep.outgoing_flow_control = outgoing_flow_control(model, F, k, chords);
  rep.transverse_max = transverse_max(model, F, opt.boundary_samples);

  for (int i = 0; i < model.size(); ++i)
    for (Real e : opt.eps)
      rep.exceptional_measures.push_back({i, e, exceptional_set(model, F, i, e, chords).measure});

  const auto nu = undamped_frequency(model, F, k);
  const auto sets = interacting_index_sets(model);
  for (int i = 0; i < model.size(); ++i) {
    std::vector<int> dirs{i};
    if (!sets.partners[i].empty())
      dirs.push_back(sets.partners[i].front());
    for (int dir : dirs)
      for (int mlt : opt.shift_multiples) {
        const Real len = mlt * grid.spacing();
        const Vec2 shift = len * normalized(model.velocities[dir]);
        rep.equicontinuity.push_back({i, dir, mlt, len, equicontinuity_modulus(prob, nu, i, shift)});
      }
  }
  return rep;
}

inline DiagnosticsReport compute_diagnostics(const TransportProblem &prob, const SolveResult &res,
                                             const DiagnosticsOptions &opt) {
  auto rep = compute_diagnostics(prob, res.field, res.alpha, res.k, res.mollifier_radius, opt);
  rep.iterations = res.iterations;
  rep.converged = res.converged;
  return rep;
}

inline nlohmann::json real_json(Real x) {
  if (std::isfinite(x))
    return x;
  return x > 0 ? "inf" : (x < 0 ? "-inf" : "nan");
}

inline nlohmann::json to_json(const DiagnosticsReport &r) {
  using nlohmann::json;
  json j;
  j["k"] = real_json(r.k);
  j["alpha"] = r.alpha;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["mass"] = r.mass;
  j["entropy"] = r.entropy;
  j["entropy_dissipation"] = r.entropy_dissipation;
  j["clamp_flags"] = r.clamp_flags;
  j["inflow"] = r.inflow;
  j["outflow"] = r.outflow;
  j["inflow_total"] = r.inflow_total;
  j["outflow_total"] = r.outflow_total;
  j["flux_residuals"] = r.flux_residuals;
  j["flux_scales"] = r.flux_scales;
  j["damped_mass_residual"] = r.damped_mass_residual;
  j["mild_residual_L1"] = r.mild_residual_L1;
  j["expo_mild_gap"] = r.expo_mild_gap;
  j["outgoing_flow_control"] = r.outgoing_flow_control;
  j["transverse_max"] = r.transverse_max;
  j["stage_distances"] = r.stage_distances;
  json ex = json::array();
  for (const auto &e : r.exceptional_measures)
    ex.push_back({{"i", e.i + 1}, {"eps", e.eps}, {"measure", e.measure}});
  j["exceptional_measures"] = ex;
  json eq = json::array();
  for (const auto &e : r.equicontinuity)
    eq.push_back({{"i", e.i + 1}, {"direction", e.direction + 1}, {"multiple", e.multiple},
                  {"shift", e.shift}, {"value", e.value}});
  j["equicontinuity"] = eq;
  return j;
}

inline std::string format_real(Real x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Flat (quantity, value) rows; shared by the text report and ladder CSV.
inline std::vector<std::pair<std::string, Real>> report_rows(const DiagnosticsReport &r) {
  std::vector<std::pair<std::string, Real>> rows{
      {"alpha", r.alpha},
      {"iterations", static_cast<Real>(r.iterations)},
      {"converged", r.converged ? 1.0 : 0.0},
      {"mass", r.mass},
      {"entropy", r.entropy},
      {"entropy_dissipation", r.entropy_dissipation},
      {"clamp_flags", static_cast<Real>(r.clamp_flags)},
      {"inflow_total", r.inflow_total},
      {"outflow_total", r.outflow_total},
  };
  const char *names[4] = {"1", "vx", "vy", "v2"};
  for (int a = 0; a < 4; ++a)
    rows.emplace_back(std::string("flux_residual_") + names[a], r.flux_residuals[a]);
  rows.emplace_back("damped_mass_residual", r.damped_mass_residual);
  rows.emplace_back("mild_residual_L1", r.mild_residual_L1);
  rows.emplace_back("expo_mild_gap", r.expo_mild_gap);
  rows.emplace_back("outgoing_flow_control", r.outgoing_flow_control);
  rows.emplace_back("transverse_max", r.transverse_max);
  for (const auto &e : r.exceptional_measures)
    rows.emplace_back("exceptional[i=" + std::to_string(e.i + 1) + ";eps=" + format_real(e.eps) + "]",
                      e.measure);
  for (const auto &e : r.equicontinuity)
    rows.emplace_back("equicontinuity[i=" + std::to_string(e.i + 1) + ";dir=" +
                          std::to_string(e.direction + 1) + ";h=" + std::to_string(e.multiple) + "]",
                      e.value);
  for (std::size_t s = 0; s < r.stage_distances.size(); ++s)
    rows.emplace_back("stage_distance[" + std::to_string(s + 1) + "]", r.stage_distances[s]);
  return rows;
}

inline std::string to_text(const DiagnosticsReport &r) {
  const auto rows = report_rows(r);
  std::size_t width = 1;
  for (const auto &row : rows)
    width = std::max(width, row.first.size());
  std::ostringstream os;
  os << std::string(width - 1, ' ') << "k  " << format_real(r.k) << "\n";
  for (const auto &[name, value] : rows)
    os << std::string(width - name.size(), ' ') << name << "  " << format_real(value) << "\n";
  return os.str();
}

} // namespace dvm
