#include "fedasync/probes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <stdexcept>

namespace fedasync::probes {

namespace {

constexpr std::uint64_t kGradCheckStream = 2000;

Batch random_batch(const ModelSpec& spec, std::size_t rows, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Batch b;
  b.features = Matrix(rows, spec.input_dim);
  for (double& v : b.features.data) v = normal(rng);
  b.labels.resize(rows);
  const std::size_t classes = spec.kind == ModelKind::logistic_regression ? 2 : spec.num_classes;
  std::uniform_int_distribution<std::size_t> label(0, classes == 0 ? 0 : classes - 1);
  for (double& y : b.labels) y = spec.kind == ModelKind::linear_regression ? normal(rng) : static_cast<double>(label(rng));
  return b;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

GradCheckResult gradient_check(const ModelSpec& spec, std::size_t draws, std::uint64_t seed, double h,
                               double tolerance) {
  spec.validate();
  Rng rng = make_rng(seed, kGradCheckStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> rows(1, 8);
  GradCheckResult result{spec, draws, 0.0, true};
  for (std::size_t d = 0; d < draws; ++d) {
    std::vector<double> wv(spec.param_count());
    for (double& v : wv) v = normal(rng);
    const ParamVector w(wv);
    const Batch batch = random_batch(spec, rows(rng), rng);
    const ParamVector g = grad(spec, w, batch);
    for (std::size_t i = 0; i < wv.size(); ++i) {
      if (spec.is_frozen(i)) continue;
      std::vector<double> plus = wv;
      std::vector<double> minus = wv;
      plus[i] += h;
      minus[i] -= h;
      const double numeric =
          (loss(spec, ParamVector(std::move(plus)), batch) - loss(spec, ParamVector(std::move(minus)), batch)) /
          (2.0 * h);
      result.max_relative_error = std::max(result.max_relative_error, relative_error(g[i], numeric));
    }
  }
  result.passed = result.max_relative_error < tolerance;
  return result;
}

std::vector<ModelSpec> gradient_check_specs() {
  std::vector<ModelSpec> specs(4);
  specs[0].kind = ModelKind::linear_regression;
  specs[0].input_dim = 5;
  specs[1].kind = ModelKind::logistic_regression;
  specs[1].input_dim = 5;
  specs[2].kind = ModelKind::softmax;
  specs[2].input_dim = 5;
  specs[2].num_classes = 3;
  specs[3].kind = ModelKind::two_layer;
  specs[3].input_dim = 4;
  specs[3].hidden_dim = 6;
  specs[3].num_classes = 3;
  return specs;
}

bool TheoremReport::all_finite() const {
  for (const auto& r : runs) {
    if (!std::isfinite(r.min_grad_norm_sq) || !std::isfinite(r.final_loss) ||
        !std::isfinite(r.constants.b1_sq_hat) || !std::isfinite(r.constants.b2_sq_hat) ||
        (r.constants.l_hat && !std::isfinite(*r.constants.l_hat))) {
      return false;
    }
  }
  return true;
}

TheoremReport theorem_probe(const sim::SimConfig& base, std::span<const int> e_grid, double eta0, double tolerance) {
  if (e_grid.size() < 3) throw std::invalid_argument("theorem_probe: the E grid needs at least 3 values");
  if (!(eta0 > 0.0) || !std::isfinite(eta0)) throw std::invalid_argument("theorem_probe: eta0 must be > 0");
  if (base.model.kind != ModelKind::logistic_regression && base.model.kind != ModelKind::softmax) {
    throw std::invalid_argument("theorem_probe: needs a convex model (logistic or softmax)");
  }
  TheoremReport report;
  report.lambda = base.hp.lambda();
  report.k_bound = base.hp.k_bound;
  report.n_clients = base.n_clients();
  report.tolerance = tolerance;
  report.eta_below_inverse_l = true;

  const Evaluator evaluator(base.model, base.train, base.eval);
  for (const int e : e_grid) {
    sim::SimConfig cfg = base;
    cfg.hp.e_total = e;
    cfg.hp.eta = eta0 / std::sqrt(static_cast<double>(e));
    cfg.eval_every = 1;

    GradientTrace gtrace;
    gtrace.full.push_back({cfg.initial_weights, evaluator.full_gradient(cfg.initial_weights)});
    sim::RunObserver observer;
    observer.on_client_step = [&gtrace](std::size_t, const ParamVector&, const ParamVector& gl,
                                        const ParamVector& gp) { gtrace.stochastic.push_back({gl, gp}); };
    observer.on_aggregate = [&gtrace, &evaluator](const GlobalState& s) {
      gtrace.full.push_back({s.w, evaluator.full_gradient(s.w)});
    };
    const sim::ExperimentTrace trace = sim::run_async(cfg, &observer);
    if (trace.summary.diverged) {
      throw DivergenceError("theorem probe run with E=" + std::to_string(e) + " diverged: " +
                            trace.summary.divergence_detail);
    }

    TheoremRun run;
    run.e_total = e;
    run.eta = cfg.hp.eta;
    run.min_grad_norm_sq = trace.summary.min_grad_norm_sq;
    run.initial_loss = trace.summary.initial_loss;
    run.final_loss = trace.summary.final_loss;
    run.max_staleness = trace.summary.max_staleness;
    run.k_bound_violations = trace.summary.k_bound_violations;
    run.constants = estimate_assumption_constants(gtrace);
    run.eta_below_inverse_l = run.constants.l_hat.has_value() && run.eta * *run.constants.l_hat < 1.0;

    report.max_staleness = std::max(report.max_staleness, run.max_staleness);
    report.k_bound_violated = report.k_bound_violated || run.k_bound_violations > 0;
    report.eta_below_inverse_l = report.eta_below_inverse_l && run.eta_below_inverse_l;
    report.runs.push_back(run);
  }

  report.non_increasing = true;
  for (std::size_t i = 1; i < report.runs.size(); ++i) {
    if (report.runs[i].min_grad_norm_sq > tolerance * report.runs[i - 1].min_grad_norm_sq) {
      report.non_increasing = false;
    }
  }
  report.notes.push_back("weak-convexity constant mu and the surrogate G are proof-internal; theta > mu is not "
                         "empirically verifiable, eta < 1/L_hat is checked instead");
  report.notes.push_back("epsilon is an analysis constant and has no counterpart in the algorithm");
  if (report.k_bound_violated) {
    report.notes.push_back("observed staleness " + std::to_string(report.max_staleness) + " exceeded k_bound " +
                           std::to_string(report.k_bound));
  }
  return report;
}

void write_theorem_report_csv(std::ostream& out, const TheoremReport& report) {
  out << "e_total,eta,min_grad_norm_sq,initial_loss,final_loss,b1_sq_hat,b2_sq_hat,l_hat,eta_below_inverse_l,"
         "max_staleness,k_bound,k_bound_violations,lambda,non_increasing,tolerance\n";
  for (const auto& r : report.runs) {
    out << r.e_total << ',' << fmt(r.eta) << ',' << fmt(r.min_grad_norm_sq) << ',' << fmt(r.initial_loss) << ','
        << fmt(r.final_loss) << ',' << fmt(r.constants.b1_sq_hat) << ',' << fmt(r.constants.b2_sq_hat) << ','
        << (r.constants.l_hat ? fmt(*r.constants.l_hat) : std::string()) << ','
        << (r.eta_below_inverse_l ? "true" : "false") << ',' << r.max_staleness << ',' << report.k_bound << ','
        << r.k_bound_violations << ',' << fmt(report.lambda) << ',' << (report.non_increasing ? "true" : "false")
        << ',' << fmt(report.tolerance) << '\n';
  }
  for (const auto& note : report.notes) out << "# " << note << '\n';
}

}  // namespace fedasync::probes
