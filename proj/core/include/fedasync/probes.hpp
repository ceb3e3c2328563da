#pragma once

// Empirical checks of the convergence result's assumptions and conclusion on
// small convex problems, plus a finite-difference gradient checker.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedasync/models.hpp"
#include "fedasync/sim.hpp"

namespace fedasync::probes {

/// |analytic - numeric| / max(1, |analytic|, |numeric|).
double relative_error(double analytic, double numeric);

struct GradCheckResult {
  ModelSpec spec;
  std::size_t draws = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

/// Central differences with step `h` against grad() on `draws` random
/// (w, batch) pairs. Frozen coordinates are skipped.
GradCheckResult gradient_check(const ModelSpec& spec, std::size_t draws, std::uint64_t seed, double h = 1e-6,
                               double tolerance = 1e-5);

/// One small spec of every model kind.
std::vector<ModelSpec> gradient_check_specs();

struct TheoremRun {
  int e_total = 0;
  double eta = 0.0;
  double min_grad_norm_sq = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  Epoch max_staleness = 0;
  std::size_t k_bound_violations = 0;
  AssumptionConstants constants;
  bool eta_below_inverse_l = false;
};

struct TheoremReport {
  std::vector<TheoremRun> runs;  // in E-grid order
  double lambda = 1.0;
  int k_bound = 0;
  std::size_t n_clients = 0;
  Epoch max_staleness = 0;
  bool k_bound_violated = false;
  double tolerance = 1.1;
  /// min_grad_norm_sq[i+1] <= tolerance * min_grad_norm_sq[i] for every i.
  bool non_increasing = false;
  bool eta_below_inverse_l = false;  // held in every run
  std::vector<std::string> notes;

  bool all_finite() const;
};

/// For every E in `e_grid` runs the asynchronous simulation of `base` with
/// eta = eta0 / sqrt(E) and E aggregations, evaluating the full-data gradient
/// after every aggregation. Throws DivergenceError if any run diverges.
TheoremReport theorem_probe(const sim::SimConfig& base, std::span<const int> e_grid, double eta0,
                            double tolerance = 1.1);

/// One row per E, followed by the run-independent fields repeated per row.
void write_theorem_report_csv(std::ostream& out, const TheoremReport& report);

}  // namespace fedasync::probes
