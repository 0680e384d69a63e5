#pragma once

// Run configuration, field and report persistence, and the three commands
// behind the `dvm` executable. Every command returns its exit code:
//   0  success
//   1  certification failed / a stage did not converge or the mild residual
//      exceeded its threshold / regenerated report differs
//   2  unreadable or invalid input, or field metadata not matching the config
//   3  a stored field violates nonnegativity

#include "dvm/diagnostics.hpp"
#include "dvm/error.hpp"
#include "dvm/fields.hpp"
#include "dvm/geometry.hpp"
#include "dvm/ladder.hpp"
#include "dvm/model.hpp"
#include "dvm/solver.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace dvm {

namespace fs = std::filesystem;

struct RunConfig {
  fs::path model_path;
  fs::path boundary_data_path;
  DomainSpec domain = EllipseSpec{};
  SolverConfig solver;
  DiagnosticsOptions diagnostics;
  fs::path output_dir;
};

namespace detail {

inline Real json_real(const nlohmann::json &j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "infinity")
      return k_infinity;
    throw ParseError("expected a number, got \"" + s + "\"");
  }
  if (!j.is_number())
    throw ParseError("expected a number");
  return j.get<Real>();
}

inline Vec2 json_vec(const nlohmann::json &j) {
  if (!j.is_array() || j.size() != 2)
    throw ParseError("expected a two-element array");
  return {json_real(j[0]), json_real(j[1])};
}

inline DomainSpec parse_domain(const nlohmann::json &d) {
  const auto kind = d.value("kind", std::string("ellipse"));
  if (kind == "ellipse" || kind == "disk") {
    EllipseSpec e;
    if (kind == "disk") {
      e.a = e.b = d.contains("radius") ? json_real(d["radius"]) : 1.0;
    } else {
      e.a = json_real(d.at("a"));
      e.b = json_real(d.at("b"));
    }
    if (d.contains("center"))
      e.center = json_vec(d["center"]);
    if (d.contains("rotation"))
      e.rotation = json_real(d["rotation"]);
    return e;
  }
  if (kind == "harmonic") {
    HarmonicSpec s;
    s.radius = json_real(d.at("radius"));
    s.amplitude = json_real(d.at("amplitude"));
    s.mode = d.at("mode").get<int>();
    if (d.contains("center"))
      s.center = json_vec(d["center"]);
    if (d.contains("rotation"))
      s.rotation = json_real(d["rotation"]);
    return s;
  }
  throw ParseError("unknown domain kind \"" + kind + "\"");
}

inline std::vector<Real> real_list(const nlohmann::json &j) {
  if (!j.is_array())
    throw ParseError("expected a list");
  std::vector<Real> out;
  for (const auto &x : j)
    out.push_back(json_real(x));
  return out;
}

} // namespace detail

/// Parses a run config; relative paths resolve against `base`.
inline RunConfig parse_run_config(const std::string &text, const fs::path &base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    RunConfig c;
    auto resolve = [&](const std::string &p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    c.model_path = resolve(j.at("model").get<std::string>());
    c.boundary_data_path = resolve(j.at("boundary_data").get<std::string>());
    c.domain = detail::parse_domain(j.at("domain"));
    c.solver.h = detail::json_real(j.at("grid").at("h"));
    if (j.contains("solver")) {
      const auto &s = j["solver"];
      if (s.contains("alpha_schedule"))
        c.solver.alpha_schedule = detail::real_list(s["alpha_schedule"]);
      if (s.contains("k_schedule"))
        c.solver.k_schedule = detail::real_list(s["k_schedule"]);
      if (s.contains("picard_tol"))
        c.solver.picard_tol = detail::json_real(s["picard_tol"]);
      if (s.contains("picard_max_iters"))
        c.solver.picard_max_iters = s["picard_max_iters"].get<int>();
      if (s.contains("relaxation"))
        c.solver.relaxation = detail::json_real(s["relaxation"]);
    }
    if (j.contains("diagnostics")) {
      const auto &d = j["diagnostics"];
      if (d.contains("eps"))
        c.diagnostics.eps = detail::real_list(d["eps"]);
      if (d.contains("shift_multiples"))
        c.diagnostics.shift_multiples = d["shift_multiples"].get<std::vector<int>>();
      if (d.contains("boundary_samples"))
        c.diagnostics.boundary_samples = d["boundary_samples"].get<int>();
      if (d.contains("chord_samples"))
        c.diagnostics.chord_samples = d["chord_samples"].get<int>();
      if (d.contains("mild_residual_threshold"))
        c.diagnostics.mild_residual_threshold = detail::json_real(d["mild_residual_threshold"]);
    }
    if (j.contains("output"))
      c.output_dir = resolve(j["output"].get<std::string>());
    c.solver.validate();
    for (Real e : c.diagnostics.eps)
      if (!(e > 0.0 && e <= 1.0))
        throw InvalidArgument("diagnostics eps must lie in (0, 1]");
    if (c.diagnostics.boundary_samples < 1)
      throw InvalidArgument("boundary_samples must be positive");
    for (const auto &p : {c.model_path, c.boundary_data_path})
      if (!fs::exists(p))
        throw InvalidArgument("file not found: " + p.string());
    return c;
  } catch (const nlohmann::json::exception &e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

inline std::string read_file(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw InvalidArgument("cannot open " + p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline RunConfig load_run_config(const fs::path &path) {
  return parse_run_config(read_file(path), path.parent_path());
}

/// Writes through a temporary in the same directory and renames into place.
inline void write_atomic(const fs::path &path, const std::string &content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw InvalidArgument("cannot write " + tmp.string());
    out << content;
    if (!out.flush())
      throw InvalidArgument("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Everything a run needs, kept alive together (the grid points at the
/// domain).
struct Session {
  RunConfig config;
  VelocityModel model;
  std::unique_ptr<ConvexDomain> domain;
  std::unique_ptr<BoundaryData> boundary;
  std::unique_ptr<TransportProblem> problem;

  explicit Session(RunConfig c) : config(std::move(c)) {
    model = load_model(config.model_path.string());
    domain = std::make_unique<ConvexDomain>(config.domain);
    boundary = std::make_unique<BoundaryData>(load_boundary_csv(config.boundary_data_path.string(), model.size()));
    auto grid = std::make_shared<const Grid>(*domain, config.solver.h, config.solver.max_alpha());
    problem = std::make_unique<TransportProblem>(model, *domain, *boundary, std::move(grid));
  }
};

struct FieldMeta {
  Real x0 = 0.0, y0 = 0.0, h = 0.0;
  int nx = 0, ny = 0, p = 0;
  Real k = 0.0, alpha = 0.0, mollifier_radius = 0.0;
};

inline nlohmann::json to_json(const FieldMeta &m) {
  return {{"x0", m.x0}, {"y0", m.y0}, {"h", m.h}, {"nx", m.nx}, {"ny", m.ny}, {"p", m.p},
          {"k", real_json(m.k)}, {"alpha", m.alpha}, {"mollifier_radius", m.mollifier_radius}};
}

inline FieldMeta field_meta(const SolveResult &r) {
  const Grid &g = r.field.grid();
  return {g.origin().x, g.origin().y, g.spacing(), g.nx(), g.ny(), r.field.species(),
          r.k, r.alpha, r.mollifier_radius};
}

inline FieldMeta parse_field_meta(const std::string &text) {
  try {
    const auto j = nlohmann::json::parse(text);
    FieldMeta m;
    m.x0 = detail::json_real(j.at("x0"));
    m.y0 = detail::json_real(j.at("y0"));
    m.h = detail::json_real(j.at("h"));
    m.nx = j.at("nx").get<int>();
    m.ny = j.at("ny").get<int>();
    m.p = j.at("p").get<int>();
    m.k = detail::json_real(j.at("k"));
    m.alpha = detail::json_real(j.at("alpha"));
    m.mollifier_radius = detail::json_real(j.at("mollifier_radius"));
    return m;
  } catch (const nlohmann::json::exception &e) {
    throw ParseError(std::string("field metadata: ") + e.what());
  }
}

/// `x,y,i,value` rows over interior nodes, 17 significant digits, one-based i.
inline std::string field_to_csv(const DensityField &f) {
  std::string out = "x,y,i,value\n";
  const Grid &g = f.grid();
  for (int i = 0; i < f.species(); ++i)
    for (NodeIndex n : g.interior_nodes()) {
      const Vec2 z = g.node(n);
      out += format_real(z.x) + ',' + format_real(z.y) + ',' + std::to_string(i + 1) + ',' +
             format_real(f.at(i, n)) + '\n';
    }
  return out;
}

/// Inverse of field_to_csv on a grid of matching layout. Nodes are located by
/// rounding (x − x0)/h; every interior node must appear exactly once.
inline DensityField field_from_csv(std::istream &in, GridPtr grid, int p) {
  DensityField f(grid, p);
  std::vector<char> seen(static_cast<std::size_t>(p) * grid->node_count(), 0);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "x,y,i,value")
      continue;
    Real x, y, v;
    int i;
    char c1, c2, c3;
    std::istringstream ls(line);
    if (!(ls >> x >> c1 >> y >> c2 >> i >> c3 >> v) || c1 != ',' || c2 != ',' || c3 != ',')
      throw ParseError("field row " + std::to_string(lineno) + " is malformed");
    if (i < 1 || i > p)
      throw ParseError("field row " + std::to_string(lineno) + ": species out of range");
    const Vec2 o = grid->origin();
    const long ix = std::lround((x - o.x) / grid->spacing());
    const long iy = std::lround((y - o.y) / grid->spacing());
    if (ix < 0 || iy < 0 || ix >= grid->nx() || iy >= grid->ny())
      throw MetadataMismatch("field row " + std::to_string(lineno) + " lies off the grid");
    const NodeIndex n = grid->index(static_cast<int>(ix), static_cast<int>(iy));
    if (!grid->interior(n))
      throw MetadataMismatch("field row " + std::to_string(lineno) + " is not an interior node");
    const std::size_t slot = static_cast<std::size_t>(i - 1) * grid->node_count() + n;
    if (seen[slot]++)
      throw ParseError("field row " + std::to_string(lineno) + " repeats a node");
    f.at(i - 1, n) = v;
  }
  for (int i = 0; i < p; ++i)
    for (NodeIndex n : grid->interior_nodes())
      if (!seen[static_cast<std::size_t>(i) * grid->node_count() + n])
        throw MetadataMismatch("field file is missing interior nodes");
  return f;
}

inline std::string k_label(Real k) { return std::isfinite(k) ? format_real(k) : "inf"; }

inline fs::path field_path(const fs::path &dir, Real k, std::size_t stage) {
  return dir / ("field_k" + k_label(k) + "_s" + std::to_string(stage + 1) + ".csv");
}

inline fs::path meta_path(const fs::path &csv) {
  fs::path p = csv;
  return p.replace_extension(".json");
}

inline fs::path report_path(const fs::path &dir, Real k, const char *ext) {
  return dir / ("report_k" + k_label(k) + ext);
}

inline int cmd_validate(const fs::path &model_path, const fs::path &out_path, std::ostream &out,
                        std::ostream &err) {
  VelocityModel model;
  try {
    model = load_model(model_path.string());
  } catch (const Error &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  const auto cert = validate_model(model);
  const std::string text = to_json(cert).dump(2) + "\n";
  if (!out_path.empty())
    write_atomic(out_path, text);
  out << text;
  return cert.certified() ? 0 : 1;
}

inline int cmd_solve(const fs::path &config_path, fs::path out_dir, std::ostream &log,
                     std::ostream &err) {
  std::unique_ptr<Session> s;
  try {
    auto cfg = load_run_config(config_path);
    if (out_dir.empty())
      out_dir = cfg.output_dir;
    if (out_dir.empty())
      throw InvalidArgument("no output directory given");
    s = std::make_unique<Session>(std::move(cfg));
  } catch (const Error &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  std::vector<DiagnosticsReport> reports;
  bool converged = true;
  nlohmann::json summary;
  summary["k"] = nlohmann::json::array();
  auto on_entry = [&](const LadderEntry &e) {
    for (std::size_t st = 0; st < e.solve.stages.size(); ++st) {
      const auto &r = e.solve.stages[st];
      const fs::path csv = field_path(out_dir, e.k, st);
      write_atomic(csv, field_to_csv(r.field));
      write_atomic(meta_path(csv), to_json(field_meta(r)).dump(2) + "\n");
    }
    write_atomic(report_path(out_dir, e.k, ".json"), to_json(e.report).dump(2) + "\n");
    write_atomic(report_path(out_dir, e.k, ".txt"), to_text(e.report));
    converged = converged && e.solve.converged();
    summary["k"].push_back({{"k", real_json(e.k)},
                            {"converged", e.solve.converged()},
                            {"failed_stages", e.solve.failed_stages},
                            {"mild_residual_L1", e.report.mild_residual_L1},
                            {"mass", e.report.mass}});
    reports.push_back(e.report);
    log << "k=" << k_label(e.k) << " converged=" << e.solve.converged()
        << " mass=" << format_real(e.report.mass)
        << " mild_residual=" << format_real(e.report.mild_residual_L1) << "\n";
  };
  try {
    k_ladder(*s->problem, s->config.solver, s->config.diagnostics, on_entry);
  } catch (const Error &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  std::ostringstream csv;
  write_ladder_csv(csv, reports);
  write_atomic(out_dir / "ladder.csv", csv.str());
  const auto &last = reports.back();
  const bool residual_ok = last.mild_residual_L1 <= s->config.diagnostics.mild_residual_threshold * last.mass;
  const int code = converged && residual_ok ? 0 : 1;
  summary["converged"] = converged;
  summary["mild_residual_ok"] = residual_ok;
  summary["exit_code"] = code;
  write_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
  return code;
}

/// Recomputes every per-k report from the stored fields and compares it
/// byte for byte with the report written by `solve`. Regenerated reports go
/// to `<fields>/diagnose/`.
inline int cmd_diagnose(const fs::path &fields_dir, const fs::path &config_path, std::ostream &log,
                        std::ostream &err) {
  std::unique_ptr<Session> s;
  try {
    s = std::make_unique<Session>(load_run_config(config_path));
  } catch (const Error &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  const TransportProblem &prob = *s->problem;
  const Grid &grid = prob.grid();
  bool identical = true;
  std::vector<DiagnosticsReport> reports;
  try {
    for (Real k : s->config.solver.k_schedule) {
      std::vector<SolveResult> stages;
      for (std::size_t st = 0; st < s->config.solver.alpha_schedule.size(); ++st) {
        const fs::path csv = field_path(fields_dir, k, st);
        const FieldMeta m = parse_field_meta(read_file(meta_path(csv)));
        if (m.x0 != grid.origin().x || m.y0 != grid.origin().y || m.h != grid.spacing() ||
            m.nx != grid.nx() || m.ny != grid.ny() || m.p != prob.species() || m.k != k ||
            m.alpha != s->config.solver.alpha_schedule[st])
          throw MetadataMismatch("field metadata of " + csv.string() + " does not match the config");
        std::istringstream in(read_file(csv));
        SolveResult r;
        r.field = field_from_csv(in, prob.grid_ptr(), prob.species());
        r.field.check_nonnegative();
        r.k = m.k;
        r.alpha = m.alpha;
        r.mollifier_radius = m.mollifier_radius;
        stages.push_back(std::move(r));
      }
      const fs::path stored = report_path(fields_dir, k, ".json");
      const auto stored_json = nlohmann::json::parse(read_file(stored));
      SolveResult &fin = stages.back();
      fin.iterations = stored_json.at("iterations").get<int>();
      fin.converged = stored_json.at("converged").get<bool>();
      auto rep = compute_diagnostics(prob, fin, s->config.diagnostics);
      for (std::size_t st = 1; st < stages.size(); ++st)
        rep.stage_distances.push_back(l1_distance(stages[st].field, stages[st - 1].field));
      const std::string text = to_json(rep).dump(2) + "\n";
      write_atomic(fields_dir / "diagnose" / stored.filename(), text);
      const bool same = text == read_file(stored);
      identical = identical && same;
      log << "k=" << k_label(k) << (same ? " identical" : " DIFFERS") << "\n";
      reports.push_back(std::move(rep));
    }
  } catch (const InvariantViolation &e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception &e) {
    err << "error: stored report unreadable: " << e.what() << "\n";
    return 2;
  } catch (const Error &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  std::ostringstream csv;
  write_ladder_csv(csv, reports);
  write_atomic(fields_dir / "diagnose" / "ladder.csv", csv.str());
  return identical ? 0 : 1;
}

} // namespace dvm
