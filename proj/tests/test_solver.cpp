// Exponential-form sweeps, Picard iteration and α continuation.

#include "dvm/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <numbers>

using namespace dvm;

namespace {

constexpr Real pi = std::numbers::pi;

VelocityModel m4() { return load_model(std::string(DVM_DATA_DIR) + "/m4.json"); }

VelocityModel no_collisions() {
  VelocityModel m;
  m.velocities = {{1, 0}, {0, 2}, {-1, -1}};
  return m;
}

// Backward exit parameter of z − s v from the unit disk.
Real disk_s_plus(const Vec2 &z, const Vec2 &v) {
  const Real a = norm2(v), b = dot(z, v), c = norm2(z) - 1.0;
  return (b + std::sqrt(b * b - a * c)) / a;
}

Real smooth_boundary(int i, Real t) { return 1.0 + 0.5 * std::cos(2 * pi * t + i); }

struct Bench {
  VelocityModel model;
  ConvexDomain domain;
  BoundaryData bd;
  GridPtr grid;
  std::unique_ptr<TransportProblem> prob;

  Bench(VelocityModel m, ConvexDomain d, BoundaryData b, Real h, Real margin = 0.0)
      : model(std::move(m)), domain(std::move(d)), bd(std::move(b)) {
    grid = std::make_shared<const Grid>(domain, h, margin);
    prob = std::make_unique<TransportProblem>(model, domain, bd, grid);
  }
};

SolverConfig quick(int iters = 200) {
  SolverConfig c;
  c.h = 1.0 / 16;
  c.alpha_schedule = {0.2, 0.0};
  c.k_schedule = {4.0};
  c.picard_tol = 1e-10;
  c.picard_max_iters = iters;
  c.relaxation = 1.0;
  return c;
}

} // namespace

TEST(SegmentWeights, MatchSimpsonOracle) {
  for (Real e0 : {-3.0, -0.5, 0.0}) {
    for (Real d : {0.0, 1e-6, 0.01, 0.0499, 0.0501, 0.3, 2.0, 40.0}) {
      const int n = 20000;
      Real a = 0.0, b = 0.0;
      for (int k = 0; k <= n; ++k) {
        const Real th = static_cast<Real>(k) / n;
        const Real w = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
        const Real e = std::exp(e0 + d * th);
        a += w * (1 - th) * e;
        b += w * th * e;
      }
      a /= 3.0 * n;
      b /= 3.0 * n;
      const auto [wa, wb] = detail::segment_weights(e0, e0 + d);
      EXPECT_NEAR(wa, a, 1e-10 * (1 + a)) << e0 << " " << d;
      EXPECT_NEAR(wb, b, 1e-10 * (1 + b)) << e0 << " " << d;
    }
  }
}

TEST(SegmentWeights, NoOverflowForStiffSegments) {
  const auto [wa, wb] = detail::segment_weights(-800.0, 0.0);
  EXPECT_TRUE(std::isfinite(wa));
  EXPECT_NEAR(wb, 799.0 / (800.0 * 800.0), 1e-15);
}

TEST(TransportValue, ExactForConstantCoefficients) {
  // F' = G − (α+ν)F along the ray has the closed form below.
  Bench s(no_collisions(), ConvexDomain::unit_disk(), BoundaryData::constant(3, 0.7), 1.0 / 16);
  const Real G = 1.3, nu = 2.5, alpha = 0.4;
  FrozenCollision fc{DensityField(s.grid, 3, G), DensityField(s.grid, 3, nu), alpha};
  for (const Vec2 z : {Vec2{0, 0}, Vec2{0.3, -0.5}, Vec2{-0.6, 0.2}}) {
    for (int i = 0; i < 3; ++i) {
      const Vec2 v = s.model.velocities[i];
      const Real sp = disk_s_plus(z, v);
      const Real r = alpha + nu;
      const Real expect = 0.7 * std::exp(-r * sp) + G * (1 - std::exp(-r * sp)) / r;
      EXPECT_NEAR(transport_value(*s.prob, fc, i, z, sp, 0.7), expect, 1e-13);
    }
  }
}

TEST(Sweep, FreeStreamingIsAFixedPointWithoutCollisions) {
  Bench s(no_collisions(), ConvexDomain::unit_disk(),
          BoundaryData::tabulate(3, 64, smooth_boundary), 1.0 / 16);
  auto cfg = quick();
  const auto r = solve_damped(*s.prob, 0.0, k_infinity, cfg);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_EQ(r.final_update_norm, 0.0);
  const auto fs = s.prob->free_streaming(k_infinity);
  EXPECT_EQ(r.field.raw(), fs.raw());
}

TEST(Sweep, DampedFreeStreamingDecaysAlongCharacteristics) {
  Bench s(no_collisions(), ConvexDomain::unit_disk(),
          BoundaryData::tabulate(3, 64, smooth_boundary), 1.0 / 16, 0.3);
  const Real alpha = 0.3;
  const auto F = damped_sweep(*s.prob, DensityField(s.grid, 3, 1.0), alpha, k_infinity);
  const auto &nodes = s.grid->interior_nodes();
  for (std::size_t q = 0; q < nodes.size(); q += 7) {
    const Vec2 z = s.grid->node(nodes[q]);
    for (int i = 0; i < 3; ++i) {
      const Vec2 v = s.model.velocities[i];
      const Real sp = disk_s_plus(z, v);
      const Vec2 e = z - sp * v;
      Real t = std::atan2(e.y, e.x) / (2 * pi);
      if (t < 0)
        t += 1.0;
      const Real fb = s.bd.raw(i, t);
      EXPECT_NEAR(F.at(i, nodes[q]), fb * std::exp(-alpha * sp), 1e-9);
    }
  }
}

TEST(Solve, UniformStateIsAFixedPointForEveryTruncation) {
  Bench s(m4(), ConvexDomain::ellipse(1.2, 0.8), BoundaryData::constant(4, 1.0), 1.0 / 16);
  for (Real k : {4.0, 64.0, k_infinity}) {
    const auto r = solve_damped(*s.prob, 0.0, k, quick(), DensityField(s.grid, 4, 1.0), 0.0);
    EXPECT_TRUE(r.converged) << k;
    for (Real x : r.field.raw())
      if (x != 0.0)
        EXPECT_NEAR(x, 1.0, 1e-12);
  }
}

TEST(Solve, ZeroIterationBudgetReportsNotConverged) {
  Bench s(m4(), ConvexDomain::unit_disk(), BoundaryData::constant(4, 1.0), 1.0 / 8);
  const auto r = solve_damped(*s.prob, 0.1, 4.0, quick(0));
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_TRUE(r.update_history.empty());
  EXPECT_EQ(r.field.raw(), s.prob->free_streaming(4.0).raw());
}

TEST(Solve, SmoothDataConvergesToANonnegativeFixedPoint) {
  Bench s(m4(), ConvexDomain::unit_disk(), BoundaryData::tabulate(4, 64, smooth_boundary), 1.0 / 16,
          0.2);
  const auto r = solve_damped(*s.prob, 0.2, 4.0, quick());
  ASSERT_TRUE(r.converged);
  EXPECT_NO_THROW(r.field.check_nonnegative());
  // The returned field reproduces itself under one more sweep.
  const auto again = damped_sweep(*s.prob, r.field, 0.2, 4.0);
  EXPECT_LT(relative_l1(again, r.field), 1e-9);
}

TEST(Solve, RelaxationDoesNotMoveTheFixedPoint) {
  Bench s(m4(), ConvexDomain::unit_disk(), BoundaryData::tabulate(4, 64, smooth_boundary), 1.0 / 16,
          0.2);
  auto cfg = quick();
  const auto a = solve_damped(*s.prob, 0.2, 4.0, cfg);
  cfg.relaxation = 0.5;
  const auto b = solve_damped(*s.prob, 0.2, 4.0, cfg);
  ASSERT_TRUE(a.converged && b.converged);
  EXPECT_LT(relative_l1(a.field, b.field), 1e-8);
  EXPECT_GT(b.iterations, a.iterations);
}

TEST(Continuation, StagesAndDistances) {
  Bench s(m4(), ConvexDomain::unit_disk(), BoundaryData::tabulate(4, 64, smooth_boundary), 1.0 / 16,
          0.2);
  const auto cr = continuation_solve(*s.prob, 4.0, quick());
  ASSERT_EQ(cr.stages.size(), 2u);
  ASSERT_EQ(cr.stage_distances.size(), 1u);
  EXPECT_TRUE(cr.converged());
  EXPECT_EQ(cr.stages[1].alpha, 0.0);
  EXPECT_EQ(cr.stages[1].mollifier_radius, 0.2);
  EXPECT_NEAR(cr.stage_distances[0], l1_distance(cr.stages[1].field, cr.stages[0].field), 1e-15);
  EXPECT_GT(cr.stage_distances[0], 0.0);
}

TEST(Continuation, FailedStagesAreRecordedAndLaterStagesStillRun) {
  Bench s(m4(), ConvexDomain::unit_disk(), BoundaryData::tabulate(4, 64, smooth_boundary), 1.0 / 16,
          0.2);
  auto cfg = quick(2);
  const auto cr = continuation_solve(*s.prob, 4.0, cfg);
  EXPECT_EQ(cr.stages.size(), 2u);
  EXPECT_EQ(cr.failed_stages, (std::vector<int>{0, 1}));
  EXPECT_FALSE(cr.converged());
}

TEST(Config, Validation) {
  SolverConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.max_alpha(), 0.1);
  auto bad = c;
  bad.alpha_schedule = {0.1, 0.1};
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.alpha_schedule = {-0.1};
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.k_schedule = {8, 4};
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.relaxation = 0.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.picard_max_iters = -1;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Problem, RejectsMismatchedInputs) {
  const auto m = m4();
  const auto d = ConvexDomain::unit_disk();
  const auto other = ConvexDomain::unit_disk();
  const auto grid = std::make_shared<const Grid>(d, 0.25);
  const auto bd3 = BoundaryData::constant(3, 1.0);
  const auto bd4 = BoundaryData::constant(4, 1.0);
  EXPECT_THROW(TransportProblem(m, d, bd3, grid), InvalidArgument);
  EXPECT_THROW(TransportProblem(m, other, bd4, grid), InvalidArgument);
  EXPECT_THROW(solve_damped(TransportProblem(m, d, bd4, grid), -1.0, 4.0, SolverConfig{}),
               InvalidArgument);
}
