#include "fedasync/experiment.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "fedasync/distill.hpp"
#include "fedasync/log.hpp"
#include "fedasync/net.hpp"
#include "fedasync/probes.hpp"

namespace fedasync::experiment {

namespace {

constexpr std::array<char, 8> kMagic = {'F', 'E', 'D', 'W', '0', '0', '0', '1'};
constexpr std::uint64_t kInitStream = 3;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

bool get_u64(std::istream& in, std::uint64_t& v) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return true;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

void write_run_artifacts(const std::filesystem::path& dir, const sim::ExperimentTrace& trace, bool plots,
                         const std::vector<std::pair<std::string, std::string>>& extra) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "trace.csv");
    write_trace_csv(out, trace);
  }
  {
    auto out = open_out(dir / "summary.txt");
    write_summary(out, trace.summary, extra);
  }
  save_weights(dir / "final_weights.bin", trace.final_weights);
  if (!plots) return;
  Series loss{"loss", {}};
  Series acc{"accuracy", {}};
  Series gn{"grad_norm_sq", {}};
  loss.points.emplace_back(0.0, trace.summary.initial_loss);
  gn.points.emplace_back(0.0, trace.summary.initial_grad_norm_sq);
  if (trace.summary.initial_accuracy) acc.points.emplace_back(0.0, *trace.summary.initial_accuracy);
  for (const auto& r : trace.rows) {
    const double t = static_cast<double>(r.t);
    if (r.global_loss) loss.points.emplace_back(t, *r.global_loss);
    if (r.grad_norm_sq) gn.points.emplace_back(t, *r.grad_norm_sq);
    if (r.accuracy) acc.points.emplace_back(t, *r.accuracy);
  }
  write_text(dir / "loss.svg", svg_line_chart("global loss", "t", "F(w_t)", {loss}));
  write_text(dir / "grad_norm_sq.svg", svg_line_chart("squared gradient norm", "t", "||grad F||^2", {gn}));
  if (!acc.points.empty()) write_text(dir / "accuracy.svg", svg_line_chart("held-out accuracy", "t", "acc", {acc}));
}

int trace_exit(const sim::ExperimentTrace& trace, std::ostream& log) {
  if (trace.summary.diverged) {
    log << "diverged: " << trace.summary.divergence_detail << '\n';
    return kDiverged;
  }
  return kOk;
}

void log_result(std::ostream& log, const std::string& label, const sim::TraceSummary& s) {
  log << label << ": " << s.aggregations << " aggregations, wall clock " << num(s.total_wall_clock_s)
      << " s, loss " << num(s.initial_loss) << " -> " << num(s.final_loss);
  if (s.final_accuracy) log << ", accuracy " << num(*s.final_accuracy);
  log << '\n';
}

ModelSpec hidden_spec(const ModelSpec& base, std::size_t hidden, double l2) {
  ModelSpec s = base;
  s.frozen_mask.clear();
  s.l2_coeff = l2;
  if (hidden == 0) {
    s.kind = ModelKind::softmax;
    s.hidden_dim = 0;
  } else {
    s.kind = ModelKind::two_layer;
    s.hidden_dim = hidden;
  }
  return s;
}

int run_distill(const config::ExperimentConfig& cfg, const std::filesystem::path& dir, std::ostream& log) {
  const PreparedData prepared = prepare_data(cfg);
  if (!prepared.train->num_classes) throw ConfigError("data.source", "distillation needs class labels");
  const auto& d = cfg.distill;
  distill::DistillPlan plan;
  plan.teacher = hidden_spec(prepared.model, d.teacher_hidden, d.weight_decay);
  for (const auto h : d.ta_hidden) plan.tas.push_back(hidden_spec(prepared.model, h, d.weight_decay));
  plan.student = hidden_spec(prepared.model, d.student_hidden, d.weight_decay);
  plan.alpha = d.alpha;
  plan.epochs_per_stage = d.epochs_per_stage;
  plan.target_mode = d.target_mode;
  Hyperparams hp = cfg.hp;
  hp.eta = d.eta;
  hp.batch_size = d.batch_size;
  hp.momentum = d.momentum;

  const distill::DistillResult result = distill::distill_chain(plan, *prepared.train, *prepared.eval, hp);
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "trace.csv");
    out << "stage,name,role,kind,hidden_dim,param_count,eval_accuracy,cost_madds,cumulative_cost_madds\n";
    for (std::size_t i = 0; i < result.stages.size(); ++i) {
      const auto& s = result.stages[i];
      const char* role = s.role == distill::StageRole::teacher     ? "teacher"
                         : s.role == distill::StageRole::assistant ? "assistant"
                                                                   : "student";
      out << i << ',' << s.name << ',' << role << ',' << to_string(s.model.spec.kind) << ','
          << s.model.spec.hidden_dim << ',' << s.model.spec.param_count() << ',' << num(s.eval_accuracy) << ','
          << num(s.cost_madds) << ',' << num(s.cumulative_cost_madds) << '\n';
    }
  }
  {
    auto out = open_out(dir / "summary.txt");
    out << "stages=" << result.stages.size() << '\n';
    out << "teaching_assistants=" << plan.tas.size() << '\n';
    out << "total_cost_madds=" << num(result.total_cost_madds()) << '\n';
    out << "total_measured_seconds=" << num(result.total_measured_seconds()) << '\n';
    for (const auto& s : result.stages) {
      out << s.name << ".eval_accuracy=" << num(s.eval_accuracy) << '\n';
      out << s.name << ".measured_seconds=" << num(s.measured_seconds) << '\n';
    }
  }
  save_weights(dir / "final_weights.bin", result.stages.back().model.weights);
  save_weights(dir / "teacher_weights.bin", result.stages.front().model.weights);
  for (const auto& s : result.stages) {
    log << s.name << ": accuracy " << num(s.eval_accuracy) << ", cost " << num(s.cost_madds) << " madds\n";
  }
  return kOk;
}

int run_gradcheck(const config::ExperimentConfig& cfg, const std::filesystem::path& dir, std::ostream& log) {
  std::filesystem::create_directories(dir);
  auto out = open_out(dir / "gradcheck.csv");
  out << "kind,draws,max_relative_error,passed\n";
  bool all = true;
  for (const auto& spec : probes::gradient_check_specs()) {
    const auto r = probes::gradient_check(spec, static_cast<std::size_t>(cfg.gradcheck_draws), cfg.hp.seed);
    out << to_string(spec.kind) << ',' << r.draws << ',' << num(r.max_relative_error) << ','
        << (r.passed ? "true" : "false") << '\n';
    log << to_string(spec.kind) << ": max relative error " << num(r.max_relative_error)
        << (r.passed ? " ok" : " FAILED") << '\n';
    all = all && r.passed;
  }
  return all ? kOk : kCheckFailed;
}

int run_sweep(const config::ExperimentConfig& cfg, const std::filesystem::path& dir, std::ostream& log) {
  const sim::SimConfig base = build_sim_config(cfg);
  std::filesystem::create_directories(dir);
  std::ostringstream cmp;
  cmp << "mode,a,beta,initial_loss,final_loss,final_accuracy,min_grad_norm_sq,total_wall_clock_s,max_staleness,"
         "diverged\n";
  auto row = [&cmp](const std::string& mode, const std::string& a, const std::string& beta,
                    const sim::TraceSummary& s) {
    cmp << mode << ',' << a << ',' << beta << ',' << num(s.initial_loss) << ',' << num(s.final_loss) << ','
        << opt(s.final_accuracy) << ',' << num(s.min_grad_norm_sq) << ',' << num(s.total_wall_clock_s) << ','
        << s.max_staleness << ',' << (s.diverged ? "true" : "false") << '\n';
  };
  bool any_diverged = false;
  double best_loss = std::numeric_limits<double>::infinity();
  std::string best;
  for (const double a : cfg.sweep.a) {
    for (const double beta : cfg.sweep.beta) {
      sim::SimConfig sc = base;
      sc.hp.a = a;
      sc.hp.beta = beta;
      const sim::ExperimentTrace trace = sim::run_async(sc);
      const std::string name = "a" + short_num(a) + "_beta" + short_num(beta);
      write_run_artifacts(dir / name, trace, false, {{"a", num(a)}, {"beta", num(beta)}});
      row("async", num(a), num(beta), trace.summary);
      any_diverged = any_diverged || trace.summary.diverged;
      if (!trace.summary.diverged && trace.summary.final_loss < best_loss) {
        best_loss = trace.summary.final_loss;
        best = "a=" + short_num(a) + " beta=" + short_num(beta);
      }
    }
  }
  if (cfg.sweep.include_sync) {
    const sim::ExperimentTrace trace = sim::run_sync(base);
    write_run_artifacts(dir / "sync", trace, false, {});
    row("sync", "", "", trace.summary);
  }
  write_text(dir / "comparison.csv", cmp.str());
  log << "lowest final loss: " << best << " (" << num(best_loss) << ")\n";
  return any_diverged ? kDiverged : kOk;
}

int run_probe(const config::ExperimentConfig& cfg, const std::filesystem::path& dir, std::ostream& log) {
  const sim::SimConfig base = build_sim_config(cfg);
  const probes::TheoremReport report =
      probes::theorem_probe(base, cfg.probe.e_grid, cfg.probe.eta0, cfg.probe.tolerance);
  std::filesystem::create_directories(dir);
  auto out = open_out(dir / "theorem_report.csv");
  probes::write_theorem_report_csv(out, report);
  for (const auto& r : report.runs) {
    log << "E=" << r.e_total << " eta=" << num(r.eta) << " min ||grad F||^2=" << num(r.min_grad_norm_sq)
        << " L_hat=" << (r.constants.l_hat ? num(*r.constants.l_hat) : std::string("n/a")) << '\n';
  }
  log << "non-increasing within " << num(report.tolerance) << ": " << (report.non_increasing ? "yes" : "no")
      << ", eta < 1/L_hat: " << (report.eta_below_inverse_l ? "yes" : "no") << '\n';
  return report.non_increasing && report.eta_below_inverse_l ? kOk : kCheckFailed;
}

int run_serve(const config::ExperimentConfig& cfg, const std::filesystem::path& dir, std::ostream& log) {
  const sim::SimConfig sc = build_sim_config(cfg);
  net::ServerSetup setup{sc.model, sc.hp, sc.h_policy, sc.initial_weights, sc.train, sc.eval, sc.eval_every};
  net::ParameterServer server(std::move(setup), cfg.net.bind, static_cast<std::uint16_t>(cfg.net.port));
  log << "listening on " << cfg.net.bind << ':' << server.port() << std::endl;
  const net::ServeResult result = server.run();
  write_run_artifacts(dir, result.trace, cfg.plots, {{"mode", "serve"}});
  auto out = open_out(dir / "arrivals.csv");
  out << "client_id,tau,local_iterations\n";
  for (const auto& a : result.arrivals) out << a.client_id << ',' << a.tau << ',' << a.local_iterations << '\n';
  log_result(log, "serve", result.trace.summary);
  return kOk;
}

int run_client_mode(const config::ExperimentConfig& cfg, std::ostream& log) {
  const sim::SimConfig sc = build_sim_config(cfg);
  Client client = sim::make_client(sc, cfg.net.client_index);
  net::ClientRunOptions options;
  options.host = cfg.net.host;
  options.port = static_cast<std::uint16_t>(cfg.net.port);
  options.max_retries = cfg.net.max_retries;
  options.initial_backoff = std::chrono::milliseconds(cfg.net.backoff_ms);
  const net::ClientRunStats stats = net::run_client(options, client);
  log << "client " << client.id() << ": " << stats.rounds << " rounds, " << stats.reconnects << " reconnects";
  if (!stats.last_error.empty()) log << ", last error: " << stats.last_error;
  log << '\n';
  return stats.exit_code;
}

}  // namespace

void write_weights(std::ostream& out, const ParamVector& w) {
  out.write(kMagic.data(), kMagic.size());
  put_u64(out, w.dim());
  for (std::size_t i = 0; i < w.dim(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(w[i]));
}

void save_weights(const std::filesystem::path& path, const ParamVector& w) {
  auto out = open_out(path);
  write_weights(out, w);
  if (!out) throw Error("failed writing " + path.string());
}

ParamVector read_weights(std::istream& in, std::optional<std::size_t> expected_dim) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw ParseError(0, "weights file: bad magic");
  std::uint64_t dim = 0;
  if (!get_u64(in, dim)) throw ParseError(0, "weights file: truncated header");
  if (expected_dim && dim != *expected_dim) {
    throw DimensionError("weights file has dimension " + std::to_string(dim) + ", model needs " +
                         std::to_string(*expected_dim));
  }
  if (dim > (std::uint64_t{1} << 40)) throw ParseError(0, "weights file: implausible dimension");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(dim, 1u << 20)));
  for (std::uint64_t i = 0; i < dim; ++i) {
    std::uint64_t bits = 0;
    if (!get_u64(in, bits)) {
      throw ParseError(0, "weights file: truncated after " + std::to_string(i) + " of " + std::to_string(dim) +
                              " values");
    }
    values.push_back(std::bit_cast<double>(bits));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(0, "weights file: trailing bytes");
  return ParamVector(std::move(values));
}

ParamVector load_weights(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  return read_weights(in, expected_dim);
}

void write_trace_csv(std::ostream& out, const sim::ExperimentTrace& trace) {
  out << "t,wall_clock_s,global_loss,grad_norm_sq,accuracy,staleness,beta_t,client_id\n";
  for (const auto& r : trace.rows) {
    out << r.t << ',' << num(r.wall_clock_s) << ',' << opt(r.global_loss) << ',' << opt(r.grad_norm_sq) << ','
        << opt(r.accuracy) << ',' << r.staleness << ',' << opt(r.beta_t) << ',' << r.client_id << '\n';
  }
}

void write_summary(std::ostream& out, const sim::TraceSummary& s,
                   const std::vector<std::pair<std::string, std::string>>& extra) {
  out << "aggregations=" << s.aggregations << '\n';
  out << "total_wall_clock_s=" << num(s.total_wall_clock_s) << '\n';
  out << "initial_loss=" << num(s.initial_loss) << '\n';
  out << "initial_grad_norm_sq=" << num(s.initial_grad_norm_sq) << '\n';
  out << "initial_accuracy=" << opt(s.initial_accuracy) << '\n';
  out << "final_loss=" << num(s.final_loss) << '\n';
  out << "final_accuracy=" << opt(s.final_accuracy) << '\n';
  out << "min_grad_norm_sq=" << num(s.min_grad_norm_sq) << '\n';
  out << "max_staleness=" << s.max_staleness << '\n';
  out << "k_bound_violations=" << s.k_bound_violations << '\n';
  out << "diverged=" << (s.diverged ? "true" : "false") << '\n';
  if (s.diverged) out << "divergence_detail=" << s.divergence_detail << '\n';
  for (const auto& [k, v] : extra) out << k << '=' << v << '\n';
}

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  static constexpr const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  auto f = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
    << title << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << f(sx(xv)) << "\" y=\"" << H - B + 18
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << short_num(xv) << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << f(sy(yv) + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << short_num(yv) << "</text>\n";
  }
  o << "<text x=\"" << W / 2 << "\" y=\"" << H - 10
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label << "</text>\n";
  o << "<text x=\"14\" y=\"" << H / 2 << "\" transform=\"rotate(-90 14 " << H / 2
    << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << y_label << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = colors[k % std::size(colors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[k].points) {
      if (std::isfinite(x) && std::isfinite(y)) o << f(sx(x)) << ',' << f(sy(y)) << ' ';
    }
    o << "\"/>\n";
    if (series.size() > 1) {
      o << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (k + 1) << "\" text-anchor=\"end\" fill=\"" << color
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << series[k].name << "</text>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

PreparedData prepare_data(const config::ExperimentConfig& cfg) {
  data::Dataset all;
  if (cfg.data.source == "csv") {
    all = data::load_csv(cfg.data.path);
  } else {
    all = data::generate_blobs(cfg.data.num_classes, cfg.data.dim, cfg.data.samples_per_class, cfg.data.spread,
                               cfg.hp.seed);
  }
  PreparedData p;
  if (cfg.data.holdout > 0) {
    if (cfg.data.holdout >= all.size()) throw ConfigError("data.holdout", "must leave at least one training row");
    auto [train, eval] = data::split_holdout(all, cfg.data.holdout, cfg.hp.seed);
    p.train = std::make_shared<const data::Dataset>(std::move(train));
    p.eval = std::make_shared<const data::Dataset>(std::move(eval));
  } else {
    p.train = std::make_shared<const data::Dataset>(std::move(all));
    p.eval = p.train;
  }
  p.model = cfg.model;
  p.model.input_dim = p.train->dim();
  if (p.model.kind == ModelKind::softmax || p.model.kind == ModelKind::two_layer) {
    if (!p.train->num_classes) throw ConfigError("model.kind", "classifier needs integer class labels");
    p.model.num_classes = std::max<std::size_t>(*p.train->num_classes, p.eval->num_classes.value_or(0));
  } else if (p.model.kind == ModelKind::logistic_regression) {
    if (p.train->num_classes.value_or(3) > 2) throw ConfigError("model.kind", "logistic regression needs 0/1 labels");
    p.model.num_classes = 2;
  }
  if (cfg.fine_tune_last_layer) p.model = freeze_all_but_last_layer(p.model);
  try {
    p.model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("model", e.what());
  }
  return p;
}

sim::SimConfig build_sim_config(const config::ExperimentConfig& cfg) {
  const PreparedData p = prepare_data(cfg);
  sim::SimConfig sc;
  sc.model = p.model;
  sc.train = p.train;
  sc.eval = p.eval;
  const std::size_t n = cfg.federation.n_clients;
  if (n > p.train->size()) throw ConfigError("federation.n_clients", "more clients than training rows");
  sc.shards = data::partition_iid(*p.train, n, cfg.hp.seed);

  std::vector<sim::DeviceProfile> profiles;
  if (!cfg.federation.profiles.empty()) {
    try {
      profiles = sim::load_device_profiles(cfg.federation.profiles);
    } catch (const ParseError& e) {
      throw ConfigError("federation.profiles", e.what());
    }
  } else {
    profiles.push_back(sim::DeviceProfile{"uniform", 1.0, 0.0, 0.0});
  }
  for (std::size_t k = 0; k < n; ++k) {
    sim::DeviceProfile d = profiles[k % profiles.size()];
    d.uplink_latency_s += cfg.federation.uplink_s;
    d.downlink_latency_s += cfg.federation.downlink_s;
    sc.devices.push_back(d);
  }

  sc.hp = cfg.hp;
  if (cfg.federation.h_policy == "uniform") {
    sc.h_policy = hpolicy::Uniform{};
  } else if (cfg.federation.h_policy == "per-device") {
    hpolicy::PerDevice pd;
    for (std::size_t k = 0; k < n; ++k) pd.table[std::to_string(k)] = cfg.federation.h_table.at(k);
    sc.h_policy = pd;
  } else {
    sc.h_policy = hpolicy::Fixed{cfg.federation.h};
  }
  sc.eval_every = cfg.federation.eval_every;
  sc.iterations_per_local_epoch = cfg.federation.iterations_per_local_epoch;
  if (!cfg.federation.initial_weights.empty()) {
    try {
      sc.initial_weights = load_weights(cfg.federation.initial_weights, sc.model.param_count());
    } catch (const Error& e) {
      throw ConfigError("federation.initial_weights", e.what());
    }
  } else {
    Rng rng = make_rng(cfg.hp.seed, kInitStream);
    sc.initial_weights = init_weights(sc.model, rng);
  }
  return sc;
}

std::filesystem::path output_dir(const config::ExperimentConfig& cfg) {
  if (const char* env = std::getenv("FEDASYNC_OUT"); env != nullptr && *env != '\0') return env;
  return cfg.output_dir;
}

int run(const config::ExperimentConfig& cfg, std::ostream& log) {
  const std::filesystem::path dir = output_dir(cfg);
  try {
    cfg.validate();
    switch (cfg.mode) {
      case config::Mode::simulate_async:
      case config::Mode::simulate_sync:
      case config::Mode::simulate_central: {
        const sim::SimConfig sc = build_sim_config(cfg);
        const sim::ExperimentTrace trace = cfg.mode == config::Mode::simulate_async  ? sim::run_async(sc)
                                           : cfg.mode == config::Mode::simulate_sync ? sim::run_sync(sc)
                                                                                     : sim::run_centralized(sc);
        write_run_artifacts(dir, trace, cfg.plots, {{"mode", std::string(config::to_string(cfg.mode))}});
        log_result(log, std::string(config::to_string(cfg.mode)), trace.summary);
        return trace_exit(trace, log);
      }
      case config::Mode::serve: return run_serve(cfg, dir, log);
      case config::Mode::client: return run_client_mode(cfg, log);
      case config::Mode::distill: return run_distill(cfg, dir, log);
      case config::Mode::gradcheck: return run_gradcheck(cfg, dir, log);
      case config::Mode::sweep: return run_sweep(cfg, dir, log);
      case config::Mode::probe: return run_probe(cfg, dir, log);
    }
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ParseError& e) {
    log << "input error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DivergenceError& e) {
    log << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const ProtocolError& e) {
    log << "protocol error: " << e.what() << '\n';
    return kProtocolError;
  }
  return kOk;
}

}  // namespace fedasync::experiment
