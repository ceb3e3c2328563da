#include "fedasync/sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fedasync/log.hpp"

namespace fedasync::sim {

namespace {

constexpr std::uint64_t kPolicyStream = 4;
constexpr std::uint64_t kClientStreamBase = 100;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, std::size_t line_no) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError(line_no, "not a finite number: '" + s + "'");
  }
  return v;
}

std::vector<Client> make_clients(const SimConfig& cfg, const RunObserver* observer) {
  std::vector<Client> clients;
  clients.reserve(cfg.n_clients());
  for (std::size_t k = 0; k < cfg.n_clients(); ++k) {
    clients.push_back(make_client(cfg, k));
    if (observer && observer->on_client_step) {
      clients.back().set_step_observer(
          [observer, k](const ParamVector& w, const ParamVector& gl, const ParamVector& gp) {
            observer->on_client_step(k, w, gl, gp);
          });
    }
  }
  return clients;
}

std::size_t parse_client_index(const ClientId& id, std::size_t n_clients) {
  std::size_t k = 0;
  const auto [ptr, ec] = std::from_chars(id.data(), id.data() + id.size(), k);
  if (ec != std::errc() || ptr != id.data() + id.size() || k >= n_clients) {
    throw std::invalid_argument("replay: unknown client id '" + id + "'");
  }
  return k;
}

}  // namespace

TraceRecorder::TraceRecorder(const SimConfig& cfg)
    : TraceRecorder(cfg.model, cfg.train, cfg.eval, cfg.hp.e_total, cfg.eval_every) {}

TraceRecorder::TraceRecorder(const ModelSpec& model, std::shared_ptr<const data::Dataset> train,
                             std::shared_ptr<const data::Dataset> eval, int e_total, int eval_every)
    : evaluator_(model, std::move(train), std::move(eval)),
      e_total_(static_cast<Epoch>(e_total)),
      eval_every_(static_cast<Epoch>(std::max(eval_every, 1))) {}

void TraceRecorder::start(const ParamVector& w0) {
  const Metrics m = evaluator_.evaluate(w0);
  trace_.summary.initial_loss = m.loss;
  trace_.summary.initial_grad_norm_sq = m.grad_norm_sq;
  trace_.summary.initial_accuracy = m.accuracy;
  trace_.summary.min_grad_norm_sq = m.grad_norm_sq;
  trace_.summary.final_loss = m.loss;
  trace_.summary.final_accuracy = m.accuracy;
  trace_.final_weights = w0;
}

bool TraceRecorder::due(Epoch t) const { return t % eval_every_ == 0 || t == e_total_; }

void TraceRecorder::add(TraceRow row, bool exceeded_k_bound) {
  trace_.summary.max_staleness = std::max(trace_.summary.max_staleness, row.staleness);
  if (exceeded_k_bound && trace_.summary.k_bound_violations++ == 0) {
    log_warning("staleness " + std::to_string(row.staleness) + " from client " + row.client_id +
                " exceeds k_bound at t=" + std::to_string(row.t) + "; later exceedances are only counted");
  }
  trace_.summary.aggregations = static_cast<std::size_t>(row.t);
  trace_.summary.total_wall_clock_s = row.wall_clock_s;
  trace_.rows.push_back(std::move(row));
}

void TraceRecorder::evaluate_last(const ParamVector& w) {
  TraceRow& row = trace_.rows.back();
  const Metrics m = evaluator_.evaluate(w);
  row.global_loss = m.loss;
  row.grad_norm_sq = m.grad_norm_sq;
  row.accuracy = m.accuracy;
  if (row.t < e_total_) trace_.summary.min_grad_norm_sq = std::min(trace_.summary.min_grad_norm_sq, m.grad_norm_sq);
}

ExperimentTrace TraceRecorder::finish(const ParamVector& w) {
  trace_.final_weights = w;
  if (trace_.summary.k_bound_violations > 1) {
    log_warning(std::to_string(trace_.summary.k_bound_violations) + " of " + std::to_string(trace_.rows.size()) +
                " aggregations exceeded k_bound (max staleness " + std::to_string(trace_.summary.max_staleness) + ")");
  }
  if (!trace_.rows.empty()) {
    const TraceRow& last = trace_.rows.back();
    if (last.global_loss) {
      trace_.summary.final_loss = *last.global_loss;
      trace_.summary.final_accuracy = last.accuracy;
    } else {
      const Metrics m = evaluator_.evaluate(w);
      trace_.summary.final_loss = m.loss;
      trace_.summary.final_accuracy = m.accuracy;
    }
  }
  return std::move(trace_);
}

void TraceRecorder::mark_diverged(const std::string& detail) {
  trace_.summary.diverged = true;
  trace_.summary.divergence_detail = detail;
}

void DeviceProfile::validate() const {
  if (!(std::isfinite(seconds_per_local_epoch) && seconds_per_local_epoch > 0.0)) {
    throw std::invalid_argument("device " + name + ": seconds_per_local_epoch must be > 0");
  }
  if (!(std::isfinite(uplink_latency_s) && uplink_latency_s >= 0.0 && std::isfinite(downlink_latency_s) &&
        downlink_latency_s >= 0.0)) {
    throw std::invalid_argument("device " + name + ": latencies must be >= 0");
  }
}

std::vector<DeviceProfile> parse_device_profiles(std::istream& in) {
  std::vector<DeviceProfile> out;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_csv_line(line);
    if (!saw_header) {
      if (fields != std::vector<std::string>{"name", "seconds_per_local_epoch", "uplink_s", "downlink_s"}) {
        throw ParseError(line_no, "expected header name,seconds_per_local_epoch,uplink_s,downlink_s");
      }
      saw_header = true;
      continue;
    }
    if (fields.size() != 4) throw ParseError(line_no, "expected 4 fields, got " + std::to_string(fields.size()));
    DeviceProfile p;
    p.name = fields[0];
    p.seconds_per_local_epoch = parse_number(fields[1], line_no);
    p.uplink_latency_s = parse_number(fields[2], line_no);
    p.downlink_latency_s = parse_number(fields[3], line_no);
    try {
      p.validate();
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
    out.push_back(std::move(p));
  }
  if (out.empty()) throw ParseError(0, "device profile file lists no devices");
  return out;
}

std::vector<DeviceProfile> load_device_profiles(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  return parse_device_profiles(in);
}

double heterogeneity_ratio(std::span<const DeviceProfile> profiles) {
  if (profiles.empty()) throw std::invalid_argument("heterogeneity_ratio: no profiles");
  const auto [lo, hi] = std::minmax_element(profiles.begin(), profiles.end(), [](const auto& a, const auto& b) {
    return a.seconds_per_local_epoch < b.seconds_per_local_epoch;
  });
  return hi->seconds_per_local_epoch / lo->seconds_per_local_epoch;
}

double round_time_s(const DeviceProfile& device, int local_iterations, double iterations_per_local_epoch) {
  if (!(iterations_per_local_epoch > 0.0)) throw std::invalid_argument("iterations_per_local_epoch must be > 0");
  const double epochs = static_cast<double>(local_iterations) / iterations_per_local_epoch;
  return device.downlink_latency_s + epochs * device.seconds_per_local_epoch + device.uplink_latency_s;
}

bool fires_before(const SimEvent& lhs, const SimEvent& rhs) {
  if (lhs.fire_time_s != rhs.fire_time_s) return lhs.fire_time_s < rhs.fire_time_s;
  if (lhs.kind != rhs.kind) return lhs.kind == SimEvent::Kind::evaluation_due;
  return lhs.client_index < rhs.client_index;
}

void SimConfig::validate() const {
  if (shards.empty()) throw std::invalid_argument("simulation needs at least one client");
  if (devices.size() != shards.size()) {
    throw std::invalid_argument("simulation: " + std::to_string(devices.size()) + " device profiles for " +
                                std::to_string(shards.size()) + " clients");
  }
  if (!train || train->size() == 0) throw std::invalid_argument("simulation: empty training set");
  model.validate();
  require_same_dim(initial_weights.dim(), model.param_count(), "initial weights");
  for (const auto& d : devices) d.validate();
  if (hp.e_total < 1) throw ConfigError("e_total", "must be >= 1");
  if (!(iterations_per_local_epoch > 0.0)) throw ConfigError("iterations_per_local_epoch", "must be > 0");
}

Rng client_rng(std::uint64_t seed, std::size_t client_index) {
  return make_rng(seed, kClientStreamBase + client_index);
}

Rng policy_rng(std::uint64_t seed) { return make_rng(seed, kPolicyStream); }

Client make_client(const SimConfig& cfg, std::size_t client_index) {
  ClientConfig cc;
  cc.client_id = std::to_string(client_index);
  cc.parent = cfg.train;
  cc.shard = cfg.shards.at(client_index);
  cc.model = cfg.model;
  cc.hp = cfg.hp;
  cc.rng = client_rng(cfg.hp.seed, client_index);
  return Client(std::move(cc));
}

ExperimentTrace run_async(const SimConfig& cfg, const RunObserver* observer) {
  cfg.validate();
  const auto& hp = cfg.hp;
  const Epoch e_total = static_cast<Epoch>(hp.e_total);
  TraceRecorder recorder(cfg);
  recorder.start(cfg.initial_weights);

  GlobalState state = GlobalState::initial(cfg.initial_weights);
  std::vector<Client> clients = make_clients(cfg, observer);
  Rng prng = policy_rng(hp.seed);
  std::vector<ClientUpdate> pending(clients.size());

  const auto later = [](const SimEvent& a, const SimEvent& b) { return fires_before(b, a); };
  std::vector<SimEvent> queue;
  auto push = [&](SimEvent ev) {
    queue.push_back(ev);
    std::push_heap(queue.begin(), queue.end(), later);
  };
  auto dispatch = [&](std::size_t k, double now) {
    const int h = assign_local_iterations(cfg.h_policy, clients[k].id(), hp, prng);
    pending[k] = clients[k].local_train(state.w, state.t, h);
    push(SimEvent{now + round_time_s(cfg.devices[k], h, cfg.iterations_per_local_epoch),
                  SimEvent::Kind::client_finished, k, now});
  };

  try {
    for (std::size_t k = 0; k < clients.size(); ++k) dispatch(k, 0.0);
    double clock = 0.0;
    while (!queue.empty()) {
      std::pop_heap(queue.begin(), queue.end(), later);
      const SimEvent ev = queue.back();
      queue.pop_back();
      if (ev.fire_time_s < clock) throw std::logic_error("simulation clock moved backwards");
      clock = ev.fire_time_s;

      if (ev.kind == SimEvent::Kind::evaluation_due) {
        recorder.evaluate_last(state.w);
        continue;
      }
      if (state.aggregations >= e_total) continue;

      auto [next, rec] = async_aggregate(state, pending[ev.client_index], hp, clock);
      state = std::move(next);
      if (observer && observer->on_aggregate) observer->on_aggregate(state);

      TraceRow row;
      row.t = state.t;
      row.wall_clock_s = clock;
      row.staleness = rec.staleness;
      row.beta_t = rec.beta_t;
      row.client_id = rec.client_id;
      row.tau = rec.tau;
      row.local_iterations = rec.local_iterations;
      recorder.add(std::move(row), rec.exceeded_k_bound);
      if (recorder.due(state.t)) push(SimEvent{clock, SimEvent::Kind::evaluation_due, ev.client_index, clock});
      if (state.aggregations < e_total) dispatch(ev.client_index, clock);
    }
  } catch (const DivergenceError& e) {
    recorder.mark_diverged(e.what());
  }
  return recorder.finish(state.w);
}

ExperimentTrace run_sync(const SimConfig& cfg, const RunObserver* observer) {
  cfg.validate();
  const auto& hp = cfg.hp;
  TraceRecorder recorder(cfg);
  recorder.start(cfg.initial_weights);

  GlobalState state = GlobalState::initial(cfg.initial_weights);
  std::vector<Client> clients = make_clients(cfg, observer);
  Rng prng = policy_rng(hp.seed);
  std::map<ClientId, std::size_t> sizes;
  for (const auto& c : clients) sizes[c.id()] = c.shard_size();

  double clock = 0.0;
  try {
    for (int round = 1; round <= hp.e_total; ++round) {
      std::vector<ClientUpdate> updates;
      updates.reserve(clients.size());
      double slowest = 0.0;
      int h_max_used = 0;
      for (std::size_t k = 0; k < clients.size(); ++k) {
        const int h = assign_local_iterations(cfg.h_policy, clients[k].id(), hp, prng);
        updates.push_back(clients[k].local_train(state.w, state.t, h));
        slowest = std::max(slowest, round_time_s(cfg.devices[k], h, cfg.iterations_per_local_epoch));
        h_max_used = std::max(h_max_used, h);
      }
      const Epoch tau = state.t;
      state = sync_round(state, updates, sizes);
      if (observer && observer->on_aggregate) observer->on_aggregate(state);
      clock += slowest;

      TraceRow row;
      row.t = state.t;
      row.wall_clock_s = clock;
      row.staleness = 0;
      row.client_id = "all";
      row.tau = tau;
      row.local_iterations = h_max_used;
      recorder.add(std::move(row), false);
      if (recorder.due(state.t)) recorder.evaluate_last(state.w);
    }
  } catch (const DivergenceError& e) {
    recorder.mark_diverged(e.what());
  }
  return recorder.finish(state.w);
}

ExperimentTrace run_centralized(const SimConfig& cfg) {
  cfg.validate();
  const auto& hp = cfg.hp;
  TraceRecorder recorder(cfg);
  recorder.start(cfg.initial_weights);

  ParamVector w = cfg.initial_weights;
  Rng rng = client_rng(hp.seed, 0);
  Rng prng = policy_rng(hp.seed);
  double clock = 0.0;
  try {
    for (int round = 1; round <= hp.e_total; ++round) {
      const int h = assign_local_iterations(cfg.h_policy, "0", hp, prng);
      w = train_centralized(cfg.model, hp, *cfg.train, std::move(w), static_cast<std::size_t>(h), rng);
      clock += round_time_s(cfg.devices.front(), h, cfg.iterations_per_local_epoch);
      TraceRow row;
      row.t = static_cast<Epoch>(round);
      row.wall_clock_s = clock;
      row.client_id = "central";
      row.tau = row.t - 1;
      row.local_iterations = h;
      recorder.add(std::move(row), false);
      if (recorder.due(static_cast<Epoch>(round))) recorder.evaluate_last(w);
    }
  } catch (const DivergenceError& e) {
    recorder.mark_diverged(e.what());
  }
  return recorder.finish(w);
}

ExperimentTrace replay_async(const SimConfig& cfg, std::span<const Arrival> arrivals) {
  cfg.validate();
  const auto& hp = cfg.hp;
  TraceRecorder recorder(cfg);
  recorder.start(cfg.initial_weights);

  GlobalState state = GlobalState::initial(cfg.initial_weights);
  std::vector<Client> clients = make_clients(cfg, nullptr);
  std::vector<ParamVector> history{state.w};
  try {
    for (const Arrival& a : arrivals) {
      const std::size_t k = parse_client_index(a.client_id, clients.size());
      if (a.tau > state.t) {
        throw ProtocolError("stale_protocol_violation", "replayed arrival from the future");
      }
      const ClientUpdate update = clients[k].local_train(history[a.tau], a.tau, a.local_iterations);
      auto [next, rec] = async_aggregate(state, update, hp, 0.0);
      state = std::move(next);
      history.push_back(state.w);

      TraceRow row;
      row.t = state.t;
      row.staleness = rec.staleness;
      row.beta_t = rec.beta_t;
      row.client_id = rec.client_id;
      row.tau = rec.tau;
      row.local_iterations = rec.local_iterations;
      recorder.add(std::move(row), rec.exceeded_k_bound);
      if (recorder.due(state.t)) recorder.evaluate_last(state.w);
    }
  } catch (const DivergenceError& e) {
    recorder.mark_diverged(e.what());
  }
  return recorder.finish(state.w);
}

double compare_wallclock(const ExperimentTrace& async_trace, const ExperimentTrace& sync_trace) {
  if (async_trace.summary.diverged || sync_trace.summary.diverged) {
    throw DivergenceError("compare_wallclock: diverged trace");
  }
  if (async_trace.rows.empty() || sync_trace.rows.empty()) {
    throw std::invalid_argument("compare_wallclock: trace has no aggregations");
  }
  if (!(sync_trace.summary.total_wall_clock_s > 0.0)) {
    throw std::invalid_argument("compare_wallclock: synchronous run took no time");
  }
  return 1.0 - async_trace.summary.total_wall_clock_s / sync_trace.summary.total_wall_clock_s;
}

}  // namespace fedasync::sim
