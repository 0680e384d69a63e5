#pragma once

// Fixed-point solver for the damped, mollified, truncated stationary problem
//
//   α F_i + v_i·∇F_i = Σ Γ_ij^lm (T(F_l)T(F_m∗μ) − T(F_i)T(F_j∗μ)),
//   F_i = f^k_bi on the ingoing boundary,
//
// iterated in exponential-multiplier form along characteristics, followed by
// α → 0 continuation and the k ladder.

#include "dvm/collision.hpp"
#include "dvm/error.hpp"
#include "dvm/fields.hpp"
#include "dvm/geometry.hpp"
#include "dvm/model.hpp"
#include "dvm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dvm {

struct SolverConfig {
  std::vector<Real> alpha_schedule{1e-1, 1e-2, 1e-3, 0.0};
  std::vector<Real> k_schedule{4.0, 16.0, 64.0};
  Real h = 1.0 / 64.0;
  Real picard_tol = 1e-8;
  int picard_max_iters = 500;
  Real relaxation = 0.7;

  void validate() const {
    if (alpha_schedule.empty() || k_schedule.empty())
      throw InvalidArgument("solver schedules must be nonempty");
    for (std::size_t s = 0; s < alpha_schedule.size(); ++s) {
      if (!(alpha_schedule[s] >= 0.0))
        throw InvalidArgument("alpha schedule entries must be nonnegative");
      if (s > 0 && !(alpha_schedule[s] < alpha_schedule[s - 1]))
        throw InvalidArgument("alpha schedule must be strictly decreasing");
    }
    for (std::size_t s = 0; s < k_schedule.size(); ++s) {
      if (!(k_schedule[s] > 0.0))
        throw InvalidArgument("k schedule entries must be positive");
      if (s > 0 && !(k_schedule[s] > k_schedule[s - 1]))
        throw InvalidArgument("k schedule must be strictly increasing");
    }
    if (!(h > 0.0))
      throw InvalidArgument("grid spacing must be positive");
    if (!(picard_tol > 0.0))
      throw InvalidArgument("picard_tol must be positive");
    if (picard_max_iters < 0)
      throw InvalidArgument("picard_max_iters must be nonnegative");
    if (!(relaxation > 0.0 && relaxation <= 1.0))
      throw InvalidArgument("relaxation must lie in (0, 1]");
  }

  /// Largest mollifier radius any stage uses; the grid collar must cover it.
  Real max_alpha() const {
    return alpha_schedule.empty() ? 0.0 : *std::max_element(alpha_schedule.begin(), alpha_schedule.end());
  }
};

/// Model, domain, data and lattice of one boundary-value problem, with the
/// characteristic entry points of every interior node precomputed.
class TransportProblem {
public:
  TransportProblem(const VelocityModel &model, const ConvexDomain &domain, const BoundaryData &bd,
                   GridPtr grid)
      : model_(&model), domain_(&domain), bd_(&bd), grid_(std::move(grid)), terms_(model.terms()) {
    if (bd.species() != model.size())
      throw InvalidArgument("boundary data species count does not match the model");
    if (&grid_->domain() != &domain)
      throw InvalidArgument("grid was built for a different domain");
    const auto &nodes = grid_->interior_nodes();
    const int p = model.size();
    s_plus_.resize(static_cast<std::size_t>(p) * nodes.size());
    t_plus_.resize(s_plus_.size());
    parallel_for(s_plus_.size(), [&](std::size_t idx) {
      const int i = static_cast<int>(idx / nodes.size());
      const RayTrace r = domain.trace(grid_->node(nodes[idx % nodes.size()]), model.velocities[i]);
      s_plus_[idx] = r.s_plus;
      t_plus_[idx] = r.t_plus;
    });
  }

  const VelocityModel &model() const { return *model_; }
  const ConvexDomain &domain() const { return *domain_; }
  const BoundaryData &boundary() const { return *bd_; }
  const GridPtr &grid_ptr() const { return grid_; }
  const Grid &grid() const { return *grid_; }
  const std::vector<CollisionTerm> &terms() const { return terms_; }
  int species() const { return model_->size(); }

  /// q indexes grid().interior_nodes().
  Real s_plus(int i, std::size_t q) const { return s_plus_[i * grid_->interior_nodes().size() + q]; }
  Real t_plus(int i, std::size_t q) const { return t_plus_[i * grid_->interior_nodes().size() + q]; }

  /// f^k_bi at the entry point of every (species, interior node).
  std::vector<Real> entry_values(Real k) const {
    std::vector<Real> out(t_plus_.size());
    const std::size_t nn = grid_->interior_nodes().size();
    parallel_for(out.size(), [&](std::size_t idx) {
      out[idx] = bd_->value(static_cast<int>(idx / nn), t_plus_[idx], k, *domain_);
    });
    return out;
  }

  /// Free-streaming field F_i(z) = f^k_bi(z_i^+(z)).
  DensityField free_streaming(Real k) const {
    const auto fb = entry_values(k);
    DensityField f(grid_, species());
    const auto &nodes = grid_->interior_nodes();
    for (int i = 0; i < species(); ++i)
      for (std::size_t q = 0; q < nodes.size(); ++q)
        f.at(i, nodes[q]) = fb[i * nodes.size() + q];
    return f;
  }

private:
  const VelocityModel *model_;
  const ConvexDomain *domain_;
  const BoundaryData *bd_;
  GridPtr grid_;
  std::vector<CollisionTerm> terms_;
  std::vector<Real> s_plus_, t_plus_;
};

namespace detail {

/// e^{E0}·(∫(1−θ)e^{dθ}dθ, ∫θe^{dθ}dθ) over θ in [0, 1] with E1 = E0 + d,
/// evaluated without overflow for any d ≥ 0.
inline std::pair<Real, Real> segment_weights(Real e0, Real e1) {
  const Real d = e1 - e0;
  if (d < 0.05) {
    // Σ d^n/(n+2)!  and  Σ (n+1) d^n/(n+2)!
    Real a = 0.0, b = 0.0, term = 0.5; // d^n/(n+2)!
    for (int n = 0; n < 8; ++n) {
      a += term;
      b += (n + 1) * term;
      term *= d / (n + 3);
    }
    const Real s = std::exp(e0);
    return {s * a, s * b};
  }
  const Real x = std::exp(-d), s = std::exp(e1) / (d * d);
  return {s * (1.0 - x - d * x), s * (d - 1.0 + x)};
}

} // namespace detail

/// Nodal gain and frequency of the damped operator, frozen for one sweep.
struct FrozenCollision {
  DensityField gain;
  DensityField frequency;
  Real alpha = 0.0;
};

/// Convolution radius in effect for damping level α; at α = 0 the smallest
/// positive α used so far is kept.
inline bool mollifier_active(Real radius, const Grid &grid) {
  return radius > 0.0 && radius >= 2.0 * grid.spacing();
}

inline FrozenCollision freeze_collision(const TransportProblem &prob, const DensityField &F,
                                        Real alpha, Real k, Real mollifier_radius) {
  const DensityField conv = mollifier_active(mollifier_radius, prob.grid()) ? mollify(F, mollifier_radius) : F;
  auto ev = eval_truncated(prob.model(), F, conv, k, true);
  return {std::move(ev.gain), std::move(ev.frequency), alpha};
}

/// Exponential-form value at `z` for species i, integrating back over
/// s_plus to the entry point where the density is `fb`. G and ν are linear
/// between samples (spacing ≤ h/|v|) and each segment is integrated exactly.
inline Real transport_value(const TransportProblem &prob, const FrozenCollision &fc, int i,
                            const Vec2 &z, Real s_plus, Real fb) {
  const Grid &grid = prob.grid();
  const Vec2 v = prob.model().velocities[i];
  const int n = std::max(1, static_cast<int>(std::ceil(s_plus * norm(v) / grid.spacing())));
  const Real ds = s_plus / n;
  const auto gain = fc.gain.component(i);
  const auto freq = fc.frequency.component(i);
  thread_local std::vector<Real> G, nu;
  G.resize(n + 1);
  nu.resize(n + 1);
  const Vec2 entry = z - s_plus * v;
  for (int k = 0; k <= n; ++k) {
    const Vec2 x = k == n ? z : entry + (k * ds) * v;
    const int cell = grid.cell_of(x);
    G[k] = std::max(0.0, grid.interpolate_in_cell(cell, x, [&](NodeIndex m) { return gain[m]; }));
    nu[k] = std::max(0.0, grid.interpolate_in_cell(cell, x, [&](NodeIndex m) { return freq[m]; }));
  }
  // E(s) = α s − ∫_s^0 ν, accumulated backwards from E = 0 at z.
  Real e1 = 0.0, acc = 0.0;
  for (int k = n - 1; k >= 0; --k) {
    const Real e0 = e1 - ds * (fc.alpha + 0.5 * (nu[k] + nu[k + 1]));
    const auto [wa, wb] = detail::segment_weights(e0, e1);
    acc += ds * (wa * G[k] + wb * G[k + 1]);
    e1 = e0;
  }
  return std::max(0.0, fb * std::exp(e1) + acc);
}

/// One exponential-form sweep with gain and frequency frozen at the input.
inline DensityField sweep(const TransportProblem &prob, const FrozenCollision &fc,
                          const std::vector<Real> &entry_values) {
  const auto &nodes = prob.grid().interior_nodes();
  const std::size_t nn = nodes.size();
  DensityField out(prob.grid_ptr(), prob.species());
  parallel_for(static_cast<std::size_t>(prob.species()) * nn, [&](std::size_t idx) {
    const int i = static_cast<int>(idx / nn);
    const std::size_t q = idx % nn;
    const NodeIndex node = nodes[q];
    out.at(i, node) = transport_value(prob, fc, i, prob.grid().node(node), prob.s_plus(i, q),
                                      entry_values[idx]);
  });
  return out;
}

inline DensityField damped_sweep(const TransportProblem &prob, const DensityField &F, Real alpha,
                                 Real k, std::optional<Real> mollifier_radius = std::nullopt) {
  const auto fc = freeze_collision(prob, F, alpha, k, mollifier_radius.value_or(alpha));
  return sweep(prob, fc, prob.entry_values(k));
}

struct SolveResult {
  DensityField field;
  int iterations = 0;
  Real final_update_norm = 0.0;
  bool converged = false;
  std::vector<Real> update_history;
  Real alpha = 0.0;
  Real k = 0.0;
  Real mollifier_radius = 0.0;
};

/// Under-relaxed Picard iteration F ← (1−ω)F + ω·sweep(F) until the relative
/// L¹ update drops to picard_tol. Not converging is reported, not thrown.
inline SolveResult solve_damped(const TransportProblem &prob, Real alpha, Real k,
                                const SolverConfig &config,
                                std::optional<DensityField> initial = std::nullopt,
                                std::optional<Real> mollifier_radius = std::nullopt) {
  if (!(alpha >= 0.0) || !(k > 0.0))
    throw InvalidArgument("solve_damped needs alpha >= 0 and k > 0");
  SolveResult res;
  res.alpha = alpha;
  res.k = k;
  res.mollifier_radius = mollifier_radius.value_or(alpha);
  res.field = initial ? std::move(*initial) : prob.free_streaming(k);
  res.final_update_norm = std::numeric_limits<Real>::infinity();
  const auto fb = prob.entry_values(k);
  const Real omega = config.relaxation;
  const auto &nodes = prob.grid().interior_nodes();
  for (int it = 0; it < config.picard_max_iters; ++it) {
    const auto fc = freeze_collision(prob, res.field, alpha, k, res.mollifier_radius);
    DensityField next = sweep(prob, fc, fb);
    if (omega != 1.0)
      for (int i = 0; i < prob.species(); ++i)
        for (NodeIndex n : nodes)
          next.at(i, n) = (1.0 - omega) * res.field.at(i, n) + omega * next.at(i, n);
    res.final_update_norm = relative_l1(next, res.field);
    res.update_history.push_back(res.final_update_norm);
    res.field = std::move(next);
    res.iterations = it + 1;
    if (!std::isfinite(res.final_update_norm))
      throw NonfiniteValue("Picard iteration diverged");
    if (res.final_update_norm <= config.picard_tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

struct ContinuationResult {
  std::vector<SolveResult> stages;
  /// L¹ distance between consecutive stage solutions (size stages − 1).
  std::vector<Real> stage_distances;
  std::vector<int> failed_stages;

  const SolveResult &final() const { return stages.back(); }
  bool converged() const { return failed_stages.empty(); }
};

/// Runs solve_damped along the α schedule, warm-starting each stage from the
/// previous one. A stage at α = 0 keeps the smallest positive α as its
/// mollifier radius.
inline ContinuationResult continuation_solve(const TransportProblem &prob, Real k,
                                             const SolverConfig &config,
                                             std::optional<DensityField> initial = std::nullopt) {
  config.validate();
  ContinuationResult out;
  Real smallest_positive = 0.0;
  std::optional<DensityField> warm = std::move(initial);
  for (std::size_t s = 0; s < config.alpha_schedule.size(); ++s) {
    const Real alpha = config.alpha_schedule[s];
    if (alpha > 0.0)
      smallest_positive = alpha;
    auto res = solve_damped(prob, alpha, k, config, std::move(warm), smallest_positive);
    if (!res.converged)
      out.failed_stages.push_back(static_cast<int>(s));
    if (!out.stages.empty())
      out.stage_distances.push_back(l1_distance(res.field, out.stages.back().field));
    warm = res.field;
    out.stages.push_back(std::move(res));
  }
  return out;
}

} // namespace dvm
