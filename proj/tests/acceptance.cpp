// Acceptance run: one PASS/FAIL line per criterion with the measured values.
// Exit status is nonzero when any criterion fails.

#include "dvm/cli.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

using namespace dvm;
namespace fs = std::filesystem;

namespace {

const fs::path data_dir = DVM_DATA_DIR;
constexpr Real pi = std::numbers::pi;

int failures = 0;
/// Result lines keyed by criterion, printed in order at the end; criterion 5
/// runs late because it inspects every field the others produce.
std::map<int, std::string> lines;

void report(int id, const std::string &name, bool ok, const std::string &detail) {
  char head[96];
  std::snprintf(head, sizeof head, "criterion %d %-28s %s  ", id, name.c_str(), ok ? "PASS" : "FAIL");
  lines[id] = head + detail;
  std::fprintf(stderr, "%s\n", lines[id].c_str());
  if (!ok)
    ++failures;
}

std::string fmt(const char *f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

struct Bench {
  VelocityModel model;
  ConvexDomain domain;
  BoundaryData bd;
  GridPtr grid;
  std::unique_ptr<TransportProblem> prob;

  Bench(VelocityModel m, ConvexDomain d, BoundaryData b, Real h, Real margin)
      : model(std::move(m)), domain(std::move(d)), bd(std::move(b)) {
    grid = std::make_shared<const Grid>(domain, h, margin);
    prob = std::make_unique<TransportProblem>(model, domain, bd, grid);
  }
};

VelocityModel m4() { return load_model((data_dir / "m4.json").string()); }

/// Entropy production of every field any criterion produced, for criterion 5.
std::vector<Real> all_entropy_productions;

void record_entropy(const TransportProblem &prob, const SolveResult &r) {
  const DomainQuadrature quad(prob.domain(), prob.grid().spacing());
  all_entropy_productions.push_back(entropy_production(prob.model(), r.field, r.k, quad).value);
}

// ---------------------------------------------------------------- 1

void maxwellian_exactness() {
  const auto cfg = load_run_config(data_dir / "maxwellian_run.json");
  Session s(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const auto ladder = k_ladder(*s.problem, cfg.solver, cfg.diagnostics);
  const Real secs = std::chrono::duration<Real>(std::chrono::steady_clock::now() - t0).count();
  bool ok = secs <= 120.0;
  Real worst_res = 0.0, worst_diss = 0.0;
  for (const auto &e : ladder) {
    ok = ok && e.solve.converged();
    worst_res = std::max(worst_res, e.report.mild_residual_L1 / e.report.mass);
    worst_diss = std::max(worst_diss, std::abs(e.report.entropy_dissipation));
    ok = ok && e.report.mild_residual_L1 <= 1e-4 * e.report.mass && e.report.entropy_dissipation <= 1e-8;
    for (const auto &st : e.solve.stages)
      record_entropy(*s.problem, st);
  }
  report(1, "maxwellian_exactness", ok,
         "max mild_residual/mass=" + fmt("%.3e", worst_res) + " max |dissipation|=" + fmt("%.3e", worst_diss) +
             " runtime=" + fmt("%.1fs", secs));
}

// ---------------------------------------------------------------- 2

/// Periodic piecewise-linear interpolation, written independently of
/// BoundaryTable.
Real pl_oracle(const std::vector<Real> &knots, const std::vector<Real> &vals, Real t) {
  const std::size_t n = knots.size();
  for (std::size_t a = 0; a < n; ++a) {
    const Real lo = knots[a], hi = a + 1 < n ? knots[a + 1] : knots[0] + 1.0;
    Real s = t;
    if (s < lo)
      s += 1.0;
    if (s >= lo && s <= hi)
      return vals[a] + (vals[(a + 1) % n] - vals[a]) * (s - lo) / (hi - lo);
  }
  return vals[0];
}

void free_streaming_oracle() {
  VelocityModel m = m4();
  m.gamma.clear();
  const std::vector<Real> knots{0.0, 0.1, 0.3, 0.45, 0.6, 0.85};
  std::vector<std::vector<Real>> vals(4);
  std::vector<BoundaryTable> tables(4);
  for (int i = 0; i < 4; ++i) {
    for (std::size_t a = 0; a < knots.size(); ++a)
      vals[i].push_back(0.5 + 0.25 * ((3 * a + i) % 5));
    tables[i] = {knots, vals[i]};
  }
  const Real h = 1.0 / 64;
  Bench b(m, ConvexDomain::unit_disk(), BoundaryData(tables), h, 0.0);
  SolverConfig cfg;
  cfg.h = h;
  cfg.relaxation = 1.0;
  const auto r = solve_damped(*b.prob, 0.0, k_infinity, cfg);
  Real worst = 0.0;
  const auto &nodes = b.grid->interior_nodes();
  for (int i = 0; i < 4; ++i) {
    const Vec2 v = m.velocities[i];
    for (NodeIndex n : nodes) {
      const Vec2 z = b.grid->node(n);
      const Real bb = dot(z, v), c = norm2(z) - 1.0, a2 = norm2(v);
      const Real sp = (bb + std::sqrt(bb * bb - a2 * c)) / a2;
      const Vec2 e = z - sp * v;
      Real t = std::atan2(e.y, e.x) / (2 * pi);
      if (t < 0)
        t += 1.0;
      worst = std::max(worst, std::abs(r.field.at(i, n) - pl_oracle(knots, vals[i], t)));
    }
  }
  const bool ok = r.converged && r.iterations == 1 && worst <= 2 * h * h;
  report(2, "free_streaming_oracle", ok,
         "max nodal error=" + fmt("%.3e", worst) + " (bound " + fmt("%.3e", 2 * h * h) +
             ") iterations=" + std::to_string(r.iterations));
}

// ---------------------------------------------------------------- 3, 4

struct BalanceRun {
  std::vector<SolveResult> stages;
  std::vector<FluxBalance> balances;
  std::vector<Real> inflow_totals;
};

BalanceRun balance_run(Real h) {
  const auto m = m4();
  const auto bd = load_boundary_csv((data_dir / "smooth.csv").string(), m.size());
  Bench b(m, ConvexDomain::unit_disk(), bd, h, 0.1);
  SolverConfig cfg;
  cfg.h = h;
  cfg.alpha_schedule = {1e-1, 1e-2, 0.0};
  cfg.k_schedule = {16.0};
  cfg.picard_tol = 1e-11;
  cfg.relaxation = 1.0;
  auto cr = continuation_solve(*b.prob, 16.0, cfg);
  BalanceRun out;
  const DomainQuadrature quad(b.domain, h);
  const int chords = default_chord_samples(*b.grid);
  for (auto &st : cr.stages) {
    if (!st.converged)
      throw NoConvergence("balance run stage did not converge");
    const auto fl = boundary_fluxes(*b.prob, st.field, st.alpha, st.k, st.mollifier_radius, chords);
    out.balances.push_back(flux_balance(b.model, species_mass(st.field, quad), fl, st.alpha));
    Real in = 0.0;
    for (Real x : fl.inflow)
      in += x;
    out.inflow_totals.push_back(in);
    record_entropy(*b.prob, st);
    out.stages.push_back(std::move(st));
  }
  return out;
}

void damped_and_balance() {
  BalanceRun fine, coarse;
  try {
    fine = balance_run(1.0 / 64);
    coarse = balance_run(1.0 / 32);
  } catch (const Error &e) {
    report(3, "damped_mass_identity", false, e.what());
    report(4, "flux_balance_alpha0", false, e.what());
    return;
  }
  {
    bool ok = true;
    std::string detail;
    for (int s = 0; s < 2; ++s) {
      const Real rel = std::abs(fine.balances[s].residuals[0]) / fine.inflow_totals[s];
      ok = ok && rel <= 1e-5;
      detail += "alpha=" + fmt("%g", fine.stages[s].alpha) + ": " + fmt("%.3e", rel) + "  ";
    }
    report(3, "damped_mass_identity", ok, detail);
  }
  {
    bool ok = true;
    std::string detail;
    const char *names[4] = {"1", "vx", "vy", "v2"};
    const auto &bf = fine.balances[2], &bc = coarse.balances[2];
    for (int a = 0; a < 4; ++a) {
      const Real rf = std::abs(bf.residuals[a]) / bf.scales[a];
      const Real rc = std::abs(bc.residuals[a]) / bc.scales[a];
      const Real ratio = std::abs(bc.residuals[a]) / std::abs(bf.residuals[a]);
      ok = ok && rf <= 1e-4 && ratio >= 3.0;
      detail += std::string(names[a]) + ": " + fmt("%.2e", rc) + "->" + fmt("%.2e", rf) + " (x" +
                fmt("%.1f", ratio) + ")  ";
    }
    report(4, "flux_balance_alpha0", ok, detail);
  }
}

// ---------------------------------------------------------------- 6, 7

void uniform_in_k() {
  const auto m = m4();
  const auto bd = load_boundary_csv((data_dir / "dilute.csv").string(), m.size());
  const Real h = 1.0 / 64;
  Bench b(m, ConvexDomain::unit_disk(), bd, h, 0.1);
  SolverConfig cfg;
  cfg.h = h;
  cfg.alpha_schedule = {1e-1, 1e-2, 1e-3, 0.0};
  cfg.k_schedule = {4.0, 16.0, 64.0, 256.0};
  cfg.picard_tol = 1e-9;
  cfg.relaxation = 1.0;
  DiagnosticsOptions opt;
  opt.eps = {0.9};
  opt.shift_multiples = {1, 2, 4};
  opt.boundary_samples = 128;
  std::vector<DiagnosticsReport> reps;
  bool converged = true;
  k_ladder(*b.prob, cfg, opt, [&](const LadderEntry &e) {
    converged = converged && e.solve.converged();
    reps.push_back(e.report);
    for (const auto &st : e.solve.stages)
      record_entropy(*b.prob, st);
  });

  // Spread is measured against the k = 4 value.
  auto spread = [&](const std::function<Real(const DiagnosticsReport &)> &q, Real &worst_ratio) {
    const Real ref = q(reps.front());
    Real s = 0.0;
    worst_ratio = 0.0;
    for (const auto &r : reps) {
      s = std::max(s, std::abs(q(r) - ref) / std::abs(ref));
      worst_ratio = std::max(worst_ratio, std::abs(q(r)) / std::abs(ref));
    }
    return s;
  };
  {
    bool ok = converged;
    std::string detail;
    const std::pair<const char *, std::function<Real(const DiagnosticsReport &)>> qs[3] = {
        {"mass", [](const DiagnosticsReport &r) { return r.mass; }},
        {"outgoing_flow", [](const DiagnosticsReport &r) { return r.outgoing_flow_control; }},
        {"transverse_max", [](const DiagnosticsReport &r) { return r.transverse_max; }}};
    for (const auto &[name, q] : qs) {
      Real ratio;
      const Real s = spread(q, ratio);
      ok = ok && s <= 0.2 && ratio <= 2.0;
      detail += std::string(name) + " spread=" + fmt("%.3f", s) + " max/k4=" + fmt("%.3f", ratio) + "  ";
    }
    report(6, "uniform_in_k_bounds", ok, detail);
  }
  {
    bool monotone = true;
    Real worst = 0.0;
    // Keyed by (i, direction): values at multiples 1, 2, 4 per k.
    std::map<std::pair<int, int>, std::vector<std::map<int, Real>>> table;
    for (std::size_t r = 0; r < reps.size(); ++r)
      for (const auto &e : reps[r].equicontinuity) {
        auto &rows = table[{e.i, e.direction}];
        rows.resize(reps.size());
        rows[r][e.multiple] = e.value;
      }
    for (const auto &[key, rows] : table) {
      for (const auto &row : rows)
        monotone = monotone && row.at(4) > row.at(2) && row.at(2) > row.at(1);
      const Real ref = rows.front().at(4);
      for (const auto &row : rows)
        worst = std::max(worst, std::abs(row.at(4) - ref) / ref);
    }
    report(7, "equicontinuity_shadow", converged && monotone && worst <= 0.2,
           std::string("monotone in shift=") + (monotone ? "yes" : "no") + " max spread at 4h=" +
               fmt("%.3f", worst));
  }
}

// ---------------------------------------------------------------- 5

void entropy_sign() {
  const auto m = m4();
  const auto dom = ConvexDomain::ellipse(1.2, 0.8, {0.1, -0.1}, 0.4);
  const auto grid = std::make_shared<const Grid>(dom, 1.0 / 32);
  const DomainQuadrature quad(dom, 1.0 / 32);
  std::mt19937 rng(2024);
  std::uniform_real_distribution<Real> u(-1.0, 1.0);
  const Real ks[4] = {2.0, 16.0, 128.0, k_infinity};
  Real worst = std::numeric_limits<Real>::infinity();
  for (int trial = 0; trial < 100; ++trial) {
    // Random smooth profiles, clipped so that some regions vanish.
    Real c[4][4];
    for (auto &row : c)
      for (Real &x : row)
        x = u(rng);
    const Real amp = std::exp(3.0 * u(rng));
    const auto F = DensityField::from_function(grid, 4, [&](int i, const Vec2 &z) {
      return amp * std::max(0.0, c[i][0] + c[i][1] * z.x + c[i][2] * z.y + c[i][3] * std::sin(3 * z.x * z.y));
    });
    worst = std::min(worst, entropy_production(m, F, ks[trial % 4], quad).value);
  }
  Real worst_solved = std::numeric_limits<Real>::infinity();
  for (Real x : all_entropy_productions)
    worst_solved = std::min(worst_solved, x);
  const bool ok = worst >= -1e-12 && worst_solved >= -1e-12;
  report(5, "entropy_dissipation_sign", ok,
         "min random=" + fmt("%.3e", worst) + " min over " + std::to_string(all_entropy_productions.size()) +
             " solver outputs=" + fmt("%.3e", worst_solved));
}

// ---------------------------------------------------------------- 8

/// Forward-mode scalar with one tangent direction.
struct Dual {
  Real v = 0.0, d = 0.0;
};
Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
Dual operator/(Dual a, Dual b) { return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)}; }
Dual operator*(Real s, Dual a) { return {s * a.v, s * a.d}; }
Dual exp(Dual a) {
  const Real e = std::exp(a.v);
  return {e, e * a.d};
}
Real value(Real x) { return x; }
Real value(Dual x) { return x.v; }
Real lift(Real x, Real) { return x; }
Dual lift(Real x, Dual) { return {x, 0.0}; }
template <class T> T clip0(T x) { return value(x) > 0.0 ? x : lift(0.0, x); }
using std::exp;

/// The node equations F = S(F) of the exponential-form discretization, over
/// a generic scalar. Written from the discretization itself: nodal truncated
/// gain and frequency, linear interpolation along uniform samples of each
/// characteristic, exact integration of the exponential weights per segment.
template <class T>
std::vector<T> node_map(const TransportProblem &prob, const std::vector<T> &F, Real alpha, Real k,
                        const std::vector<Real> &fb) {
  const Grid &grid = prob.grid();
  const auto &nodes = grid.interior_nodes();
  const std::size_t nn = nodes.size();
  const int p = prob.species();
  const Real h = grid.spacing();
  std::vector<long> slot(grid.node_count(), -1);
  for (std::size_t q = 0; q < nn; ++q)
    slot[nodes[q]] = static_cast<long>(q);
  auto trunc = [k](T x) { return x / (lift(1.0, x) + (1.0 / k) * x); };
  std::vector<T> G(p * nn, lift(0.0, F[0])), nu(p * nn, lift(0.0, F[0]));
  for (std::size_t q = 0; q < nn; ++q)
    for (const auto &t : prob.terms()) {
      G[t.i * nn + q] = G[t.i * nn + q] + t.gamma * (trunc(F[t.l * nn + q]) * trunc(F[t.m * nn + q]));
      nu[t.i * nn + q] = nu[t.i * nn + q] + t.gamma * trunc(F[t.j * nn + q]);
    }
  for (int i = 0; i < p; ++i)
    for (std::size_t q = 0; q < nn; ++q)
      nu[i * nn + q] = nu[i * nn + q] / (lift(1.0, F[0]) + (1.0 / k) * F[i * nn + q]);

  auto sample = [&](const std::vector<T> &field, int i, const Vec2 &x) {
    T acc = lift(0.0, field[0]);
    for (const auto &st : grid.stencil(x))
      acc = acc + st.weight * field[i * nn + slot[st.node]];
    return clip0(acc);
  };
  std::vector<T> out(p * nn);
  for (int i = 0; i < p; ++i) {
    const Vec2 v = prob.model().velocities[i];
    for (std::size_t q = 0; q < nn; ++q) {
      const Vec2 z = grid.node(nodes[q]);
      const Real sp = prob.s_plus(i, q);
      const int n = std::max(1, static_cast<int>(std::ceil(sp * norm(v) / h)));
      const Real ds = sp / n;
      std::vector<T> g(n + 1), w(n + 1);
      for (int a = 0; a <= n; ++a) {
        const Vec2 x = a == n ? z : (z - sp * v) + (a * ds) * v;
        g[a] = sample(G, i, x);
        w[a] = sample(nu, i, x);
      }
      // E runs from 0 at z down to E(entry); each segment contributes
      // ds ∫ (g_a (1−θ) + g_{a+1} θ) e^{E(θ)} dθ with E linear in θ.
      T e1 = lift(0.0, F[0]);
      T acc = lift(0.0, F[0]);
      for (int a = n - 1; a >= 0; --a) {
        const T e0 = e1 - ds * (lift(alpha, F[0]) + 0.5 * (w[a] + w[a + 1]));
        const T d = e1 - e0;
        T wa, wb;
        if (value(d) < 0.05) {
          T sa = lift(0.0, d), sb = lift(0.0, d), term = lift(0.5, d);
          for (int m = 0; m < 8; ++m) {
            sa = sa + term;
            sb = sb + static_cast<Real>(m + 1) * term;
            term = term * d / lift(m + 3.0, d);
          }
          wa = exp(e0) * sa;
          wb = exp(e0) * sb;
        } else {
          const T x = exp(lift(0.0, d) - d);
          const T s = exp(e1) / (d * d);
          wa = s * (lift(1.0, d) - x - d * x);
          wb = s * (d - lift(1.0, d) + x);
        }
        acc = acc + ds * (wa * g[a] + wb * g[a + 1]);
        e1 = e0;
      }
      out[i * nn + q] = clip0(fb[i * nn + q] * exp(e1) + acc);
    }
  }
  return out;
}

void dense_oracle() {
  const auto m = m4();
  const auto dom = ConvexDomain::unit_disk();
  const Real h = 2.0 / 11.0;
  const auto grid = std::make_shared<const Grid>(dom, Vec2{-1.0, -1.0}, h, 12, 12);
  const auto bd = BoundaryData::tabulate(4, 64, [](int i, Real t) { return 1.0 + 0.5 * std::cos(2 * pi * t + i); });
  const TransportProblem prob(m, dom, bd, grid);
  const Real alpha = 0.05, k = 8.0;
  if (mollifier_active(alpha, *grid))
    throw InvalidArgument("oracle assumes an inactive mollifier");
  const auto fb = prob.entry_values(k);
  const auto &nodes = grid->interior_nodes();
  const std::size_t nn = nodes.size(), N = 4 * nn;

  std::vector<Real> F(N);
  const auto fs = prob.free_streaming(k);
  for (int i = 0; i < 4; ++i)
    for (std::size_t q = 0; q < nn; ++q)
      F[i * nn + q] = fs.at(i, nodes[q]);

  auto residual = [&](const std::vector<Real> &x) {
    const auto s = node_map(prob, x, alpha, k, fb);
    Eigen::VectorXd r(N);
    for (std::size_t a = 0; a < N; ++a)
      r[a] = x[a] - s[a];
    return r;
  };
  Eigen::VectorXd r = residual(F);
  int newton = 0;
  for (; newton < 40 && r.lpNorm<Eigen::Infinity>() > 1e-14; ++newton) {
    Eigen::MatrixXd J(N, N);
    std::vector<Dual> X(N);
    for (std::size_t c = 0; c < N; ++c) {
      for (std::size_t a = 0; a < N; ++a)
        X[a] = {F[a], a == c ? 1.0 : 0.0};
      const auto S = node_map(prob, X, alpha, k, fb);
      for (std::size_t a = 0; a < N; ++a)
        J(a, c) = (a == c ? 1.0 : 0.0) - S[a].d;
    }
    const Eigen::VectorXd step = J.partialPivLu().solve(-r);
    Real lam = 1.0;
    for (;;) {
      std::vector<Real> trial(N);
      for (std::size_t a = 0; a < N; ++a)
        trial[a] = F[a] + lam * step[a];
      const Eigen::VectorXd rt = residual(trial);
      if (rt.norm() < r.norm() || lam < 1e-6) {
        F = std::move(trial);
        r = rt;
        break;
      }
      lam *= 0.5;
    }
  }

  SolverConfig cfg;
  cfg.h = h;
  cfg.picard_tol = 1e-14;
  cfg.picard_max_iters = 1000;
  cfg.relaxation = 1.0;
  const auto pic = solve_damped(prob, alpha, k, cfg);
  Real diff = 0.0, total = 0.0;
  for (int i = 0; i < 4; ++i)
    for (std::size_t q = 0; q < nn; ++q) {
      diff += std::abs(pic.field.at(i, nodes[q]) - F[i * nn + q]);
      total += std::abs(F[i * nn + q]);
    }
  const Real rel = diff / total;
  report(8, "dense_newton_oracle", pic.converged && rel <= 1e-6,
         "unknowns=" + std::to_string(N) + " newton steps=" + std::to_string(newton) + " |R|inf=" +
             fmt("%.1e", r.lpNorm<Eigen::Infinity>()) + " picard iters=" + std::to_string(pic.iterations) +
             " relative L1 gap=" + fmt("%.3e", rel));
}

// ---------------------------------------------------------------- 9

void determinism() {
  const fs::path root = fs::temp_directory_path() / "dvm_acceptance_determinism";
  fs::remove_all(root);
  std::ostringstream log, err;
  int codes[2];
  const char *threads[2] = {"1", "4"};
  for (int a = 0; a < 2; ++a) {
    setenv("DVM_THREADS", threads[a], 1);
    codes[a] = cmd_solve(data_dir / "small_run.json", root / threads[a], log, err);
  }
  setenv("DVM_THREADS", "1", 1);
  std::size_t files = 0, mismatched = 0;
  for (const auto &entry : fs::directory_iterator(root / "1")) {
    ++files;
    const fs::path other = root / "4" / entry.path().filename();
    if (!fs::exists(other) || read_file(entry.path()) != read_file(other))
      ++mismatched;
  }
  std::size_t other_files = std::distance(fs::directory_iterator(root / "4"), fs::directory_iterator{});
  const bool ok = codes[0] == 0 && codes[1] == 0 && files > 0 && files == other_files && mismatched == 0;
  report(9, "determinism_threads_1_vs_4", ok,
         std::to_string(files) + " files compared, " + std::to_string(mismatched) + " differ");
}

} // namespace

int main() {
  setenv("DVM_THREADS", "1", 1);
  const std::pair<std::vector<int>, std::function<void()>> runs[] = {
      {{1}, maxwellian_exactness}, {{2}, free_streaming_oracle}, {{3, 4}, damped_and_balance},
      {{6, 7}, uniform_in_k},      {{5}, entropy_sign},          {{8}, dense_oracle},
      {{9}, determinism}};
  for (const auto &[ids, fn] : runs) {
    try {
      fn();
    } catch (const std::exception &e) {
      for (int id : ids)
        report(id, "exception", false, e.what());
    }
  }
  for (const auto &[id, line] : lines)
    std::printf("%s\n", line.c_str());
  std::printf("%s: %d criterion failure(s)\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
