#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "fedasync/core.hpp"
#include "fedasync/data.hpp"
#include "fedasync/models.hpp"

namespace fedasync {

struct AggregationRecord {
  Epoch t_after = 0;
  ClientId client_id;
  Epoch tau = 0;
  Epoch staleness = 0;  // t - tau at receipt, before the increment
  double beta_t = 0.0;
  int local_iterations = 0;
  std::optional<double> global_loss_after;
  double timestamp = 0.0;
  bool exceeded_k_bound = false;
};

/// Applies one client update: beta_t = staleness_weight(beta, a, t, tau),
/// w <- mix(w, w_new, beta_t), t <- t + 1. Stale updates are never dropped; a
/// staleness above hp.k_bound only sets `exceeded_k_bound` on the record.
std::pair<GlobalState, AggregationRecord> async_aggregate(const GlobalState& state, const ClientUpdate& update,
                                                          const Hyperparams& hp, double timestamp = 0.0);

/// FedAvg: w <- sum_k n_k w_k / sum_k n_k over exactly the clients named in
/// `shard_sizes`, each of which must supply one update stamped tau == state.t.
GlobalState sync_round(const GlobalState& state, std::span<const ClientUpdate> updates,
                       const std::map<ClientId, std::size_t>& shard_sizes);

namespace hpolicy {
struct Fixed {
  int h = 3;
};
struct Uniform {};
/// Per-client table; clients missing from the table fall back to h_min.
struct PerDevice {
  std::map<ClientId, int> table;
};
}  // namespace hpolicy

using HPolicy = std::variant<hpolicy::Fixed, hpolicy::Uniform, hpolicy::PerDevice>;

/// Number of local iterations the server hands to `client_id`; always within
/// [hp.h_min, hp.h_max]. `rng` is only consumed by the uniform policy.
int assign_local_iterations(const HPolicy& policy, const ClientId& client_id, const Hyperparams& hp, Rng& rng);

/// Metrics of a parameter vector: objective and gradient on the training set,
/// top-1 accuracy on the held-out set.
struct Metrics {
  double loss = 0.0;
  double grad_norm_sq = 0.0;
  std::optional<double> accuracy;
};

class Evaluator {
 public:
  Evaluator(ModelSpec model, std::shared_ptr<const data::Dataset> train, std::shared_ptr<const data::Dataset> eval);

  Metrics evaluate(const ParamVector& w) const;
  /// Full-training-set gradient of the objective.
  ParamVector full_gradient(const ParamVector& w) const;

 private:
  ModelSpec model_;
  std::shared_ptr<const data::Dataset> train_;
  std::shared_ptr<const data::Dataset> eval_;
  Batch train_batch_;
};

/// Thread-safe owner of the global state. Aggregations are serialized in
/// arrival order and `snapshot()` always returns a consistent (w, t) pair.
class AsyncServer {
 public:
  AsyncServer(ParamVector w0, Hyperparams hp);

  /// Aggregates and returns the record plus the post-aggregation state.
  std::pair<AggregationRecord, GlobalState> submit(const ClientUpdate& update, double timestamp = 0.0);
  GlobalState snapshot() const;
  std::vector<AggregationRecord> history() const;

 private:
  mutable std::mutex mu_;
  GlobalState state_;
  Hyperparams hp_;
  std::vector<AggregationRecord> history_;
};

}  // namespace fedasync
