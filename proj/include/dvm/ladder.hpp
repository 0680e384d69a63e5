#pragma once

// The k ladder: continuation in α at each truncation level k, with the
// diagnostics of every final stage, so bounds uniform in k can be read off.

#include "dvm/diagnostics.hpp"
#include "dvm/solver.hpp"

#include <functional>
#include <ostream>
#include <vector>

namespace dvm {

struct LadderEntry {
  Real k = 0.0;
  ContinuationResult solve;
  DiagnosticsReport report;
};

/// Runs continuation_solve for each k of the schedule, each from its own
/// free-streaming guess. `on_entry` sees every entry as soon as it is done.
inline std::vector<LadderEntry>
k_ladder(const TransportProblem &prob, const SolverConfig &config, const DiagnosticsOptions &opt,
         const std::function<void(const LadderEntry &)> &on_entry = {}) {
  config.validate();
  std::vector<LadderEntry> out;
  for (Real k : config.k_schedule) {
    LadderEntry e;
    e.k = k;
    e.solve = continuation_solve(prob, k, config);
    e.report = compute_diagnostics(prob, e.solve.final(), opt);
    e.report.converged = e.solve.converged();
    e.report.stage_distances = e.solve.stage_distances;
    if (on_entry)
      on_entry(e);
    out.push_back(std::move(e));
  }
  return out;
}

/// CSV with columns k, quantity, value (17 significant digits).
inline void write_ladder_csv(std::ostream &os, const std::vector<DiagnosticsReport> &reports) {
  os << "k,quantity,value\n";
  for (const auto &r : reports)
    for (const auto &[name, value] : report_rows(r))
      os << format_real(r.k) << ',' << name << ',' << format_real(value) << '\n';
}

} // namespace dvm
