#pragma once

// Deterministic discrete-event simulation of heterogeneous devices running the
// asynchronous protocol, the synchronous FedAvg baseline and a centralized
// reference trainer. Simulated time is decoupled from real time.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedasync/client.hpp"
#include "fedasync/core.hpp"
#include "fedasync/data.hpp"
#include "fedasync/models.hpp"
#include "fedasync/server.hpp"

namespace fedasync::sim {

struct DeviceProfile {
  std::string name;
  double seconds_per_local_epoch = 1.0;
  double uplink_latency_s = 0.0;
  double downlink_latency_s = 0.0;

  void validate() const;
};

/// CSV with header `name,seconds_per_local_epoch,uplink_s,downlink_s`.
std::vector<DeviceProfile> parse_device_profiles(std::istream& in);
std::vector<DeviceProfile> load_device_profiles(const std::filesystem::path& path);

/// Slowest over fastest seconds_per_local_epoch.
double heterogeneity_ratio(std::span<const DeviceProfile> profiles);

/// Seconds for one dispatch/train/upload cycle: compute time scales linearly
/// with H, plus both link latencies.
double round_time_s(const DeviceProfile& device, int local_iterations, double iterations_per_local_epoch);

struct SimEvent {
  enum class Kind { evaluation_due, client_finished };

  double fire_time_s = 0.0;
  Kind kind = Kind::client_finished;
  std::size_t client_index = 0;
  double created_at_s = 0.0;
};

/// Strict-weak ordering used by the event queue: earliest fire time first,
/// evaluations before client completions at equal times, then client index.
bool fires_before(const SimEvent& lhs, const SimEvent& rhs);

struct TraceRow {
  Epoch t = 0;
  double wall_clock_s = 0.0;
  std::optional<double> global_loss;
  std::optional<double> grad_norm_sq;
  std::optional<double> accuracy;
  Epoch staleness = 0;
  std::optional<double> beta_t;  // absent for synchronous/centralized rounds
  ClientId client_id;
  Epoch tau = 0;
  int local_iterations = 0;
};

struct TraceSummary {
  std::size_t aggregations = 0;
  double total_wall_clock_s = 0.0;
  double initial_loss = 0.0;
  double initial_grad_norm_sq = 0.0;
  std::optional<double> initial_accuracy;
  double final_loss = 0.0;
  std::optional<double> final_accuracy;
  /// min ||grad F(w_t)||^2 over evaluated t in [0, E-1].
  double min_grad_norm_sq = 0.0;
  Epoch max_staleness = 0;
  std::size_t k_bound_violations = 0;
  bool diverged = false;
  std::string divergence_detail;
};

struct ExperimentTrace {
  std::vector<TraceRow> rows;
  TraceSummary summary;
  ParamVector final_weights;
};

struct SimConfig {
  ModelSpec model;
  std::shared_ptr<const data::Dataset> train;
  std::shared_ptr<const data::Dataset> eval;
  std::vector<data::Shard> shards;       // one per client
  std::vector<DeviceProfile> devices;    // one per client
  Hyperparams hp;
  HPolicy h_policy = hpolicy::Fixed{3};
  int eval_every = 1;
  double iterations_per_local_epoch = 1.0;
  ParamVector initial_weights;

  std::size_t n_clients() const noexcept { return shards.size(); }
  void validate() const;
};

/// Builds a trace: evaluates rows on the eval_every schedule (and always the
/// final one) and accumulates the summary.
class TraceRecorder {
 public:
  explicit TraceRecorder(const SimConfig& cfg);
  TraceRecorder(const ModelSpec& model, std::shared_ptr<const data::Dataset> train,
                std::shared_ptr<const data::Dataset> eval, int e_total, int eval_every);

  /// Evaluates w_0; must be called first.
  void start(const ParamVector& w0);
  bool due(Epoch t) const;
  void add(TraceRow row, bool exceeded_k_bound);
  /// Fills the metrics of the most recent row from `w`.
  void evaluate_last(const ParamVector& w);
  void mark_diverged(const std::string& detail);
  ExperimentTrace finish(const ParamVector& w);

 private:
  Evaluator evaluator_;
  Epoch e_total_;
  Epoch eval_every_;
  ExperimentTrace trace_;
};

/// Optional hooks for probes. Both run synchronously inside the simulation.
struct RunObserver {
  std::function<void(std::size_t client_index, const ParamVector& w, const ParamVector& grad_loss,
                     const ParamVector& grad_prox)>
      on_client_step;
  std::function<void(const GlobalState& state)> on_aggregate;
};

/// Random streams derived from hp.seed.
Rng client_rng(std::uint64_t seed, std::size_t client_index);
Rng policy_rng(std::uint64_t seed);

/// Builds the client for `client_index` exactly as the simulator does.
Client make_client(const SimConfig& cfg, std::size_t client_index);

/// Event-driven asynchronous run. Every client starts at clock 0 with w_0 and
/// is re-dispatched the moment its update has been aggregated. Stops after
/// exactly hp.e_total aggregations.
ExperimentTrace run_async(const SimConfig& cfg, const RunObserver* observer = nullptr);

/// Synchronous FedAvg: every round all clients train on the same w_t and the
/// round lasts as long as its slowest client.
ExperimentTrace run_sync(const SimConfig& cfg, const RunObserver* observer = nullptr);

/// Plain SGD on the whole training set; one row per H steps, E rows, batches
/// drawn from client 0's stream.
ExperimentTrace run_centralized(const SimConfig& cfg);

/// One recorded arrival at an asynchronous server.
struct Arrival {
  ClientId client_id;
  Epoch tau = 0;
  int local_iterations = 0;
};

/// Re-executes an asynchronous run in a given arrival order: each arrival is
/// client `client_id` (a decimal index) training on w_tau with its own stream.
ExperimentTrace replay_async(const SimConfig& cfg, std::span<const Arrival> arrivals);

/// 1 - async_total / sync_total. Throws if either trace diverged or is empty.
double compare_wallclock(const ExperimentTrace& async_trace, const ExperimentTrace& sync_trace);

}  // namespace fedasync::sim
