#pragma once
// Scenario ingestion, sweep orchestration, and CSV/JSON result emission.
// The command core is exposed as a function of (verb, config text) so the
// binary stays a thin flag parser and the whole pipeline is testable without
// spawning processes. Configs are JSON documents; see README for the schema.

#include <iosfwd>
#include <string>

namespace keyforge::cli {

struct RunOptions {
  bool json = false;       // emit rows as a JSON array instead of CSV
  int jobs = 0;            // sweep worker count; 0 = all available cores
  bool verbose = false;    // progress notes on the diagnostic stream
  double solver_tol = 0.0; // >0 overrides the solver gap tolerance; when 0,
                           // the KEYFORGE_SOLVER_TOL environment variable is
                           // consulted instead
};

// Runs one verb ("asymptotic", "finite", "decoy", "sweep") against the given
// config document. Result rows go to `out`, diagnostics (validation errors,
// --verbose notes) to `diag`. Returns the process exit code: 0 on success,
// 2 when the config fails validation (every violation is reported with its
// document path), 3 when any row's computation failed (rows are still
// written; the failed row carries the error code in its status column).
int run_command(const std::string& verb, const std::string& config_text,
                std::ostream& out, std::ostream& diag,
                const RunOptions& opts = {});

}  // namespace keyforge::cli
