#include "fedasync/server.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "fedasync/log.hpp"

namespace fedasync {

std::pair<GlobalState, AggregationRecord> async_aggregate(const GlobalState& state, const ClientUpdate& update,
                                                          const Hyperparams& hp, double timestamp) {
  if (update.tau > state.t) {
    throw ProtocolError("stale_protocol_violation",
                        "client " + update.client_id + " sent tau=" + std::to_string(update.tau) +
                            " but server is at t=" + std::to_string(state.t));
  }
  require_same_dim(update.w_new.dim(), state.w.dim(), "async_aggregate");

  AggregationRecord rec;
  rec.client_id = update.client_id;
  rec.tau = update.tau;
  rec.staleness = state.t - update.tau;
  rec.beta_t = staleness_weight(hp.beta, hp.a, state.t, update.tau);
  rec.local_iterations = update.local_iterations_done;
  rec.timestamp = timestamp;
  rec.exceeded_k_bound = rec.staleness > static_cast<Epoch>(hp.k_bound);

  GlobalState next;
  next.w = mix(state.w, update.w_new, rec.beta_t);
  next.t = state.t + 1;
  next.aggregations = state.aggregations + 1;
  next.max_staleness_seen = std::max(state.max_staleness_seen, rec.staleness);
  rec.t_after = next.t;
  return {std::move(next), std::move(rec)};
}

GlobalState sync_round(const GlobalState& state, std::span<const ClientUpdate> updates,
                       const std::map<ClientId, std::size_t>& shard_sizes) {
  if (shard_sizes.empty()) throw std::invalid_argument("sync_round: no participating clients");
  std::map<ClientId, const ClientUpdate*> by_client;
  for (const auto& u : updates) {
    if (!shard_sizes.count(u.client_id)) {
      throw std::invalid_argument("sync_round: update from non-participating client " + u.client_id);
    }
    if (!by_client.emplace(u.client_id, &u).second) {
      throw std::invalid_argument("sync_round: duplicate update from client " + u.client_id);
    }
    if (u.tau != state.t) {
      throw ProtocolError("stale_update", "sync_round: client " + u.client_id + " trained on epoch " +
                                              std::to_string(u.tau) + ", expected " + std::to_string(state.t));
    }
    require_same_dim(u.w_new.dim(), state.w.dim(), "sync_round");
  }

  std::size_t total = 0;
  for (const auto& [id, n] : shard_sizes) {
    if (!by_client.count(id)) throw std::invalid_argument("sync_round: missing update from client " + id);
    total += n;
  }
  if (total == 0) throw std::invalid_argument("sync_round: all shards empty");
  // Normalised weights keep a lone participant's model bit-exact.
  const double denom = static_cast<double>(total);
  std::vector<double> acc(state.w.dim(), 0.0);
  for (const auto& [id, n] : shard_sizes) {
    const double weight = static_cast<double>(n) / denom;
    const auto& w = by_client.at(id)->w_new;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weight * w[i];
  }

  GlobalState next;
  next.w = ParamVector(std::move(acc));
  next.t = state.t + 1;
  next.aggregations = state.aggregations + 1;
  next.max_staleness_seen = state.max_staleness_seen;
  return next;
}

int assign_local_iterations(const HPolicy& policy, const ClientId& client_id, const Hyperparams& hp, Rng& rng) {
  struct Visitor {
    const ClientId& id;
    const Hyperparams& hp;
    Rng& rng;

    int operator()(const hpolicy::Fixed& f) const {
      if (f.h < hp.h_min || f.h > hp.h_max) {
        throw ConfigError("h_fixed", "fixed H=" + std::to_string(f.h) + " outside [" + std::to_string(hp.h_min) +
                                         ", " + std::to_string(hp.h_max) + "]");
      }
      return f.h;
    }
    int operator()(const hpolicy::Uniform&) const {
      std::uniform_int_distribution<int> dist(hp.h_min, hp.h_max);
      return dist(rng);
    }
    int operator()(const hpolicy::PerDevice& p) const {
      const auto it = p.table.find(id);
      const int h = it == p.table.end() ? hp.h_min : it->second;
      if (h < hp.h_min || h > hp.h_max) {
        throw ConfigError("h_table", "H=" + std::to_string(h) + " for client " + id + " outside [" +
                                         std::to_string(hp.h_min) + ", " + std::to_string(hp.h_max) + "]");
      }
      return h;
    }
  };
  return std::visit(Visitor{client_id, hp, rng}, policy);
}

Evaluator::Evaluator(ModelSpec model, std::shared_ptr<const data::Dataset> train,
                     std::shared_ptr<const data::Dataset> eval)
    : model_(std::move(model)), train_(std::move(train)), eval_(std::move(eval)) {
  if (!train_ || train_->size() == 0) throw std::invalid_argument("evaluator: empty training set");
  train_batch_.features = train_->features;
  train_batch_.labels = train_->labels;
}

Metrics Evaluator::evaluate(const ParamVector& w) const {
  Metrics m;
  m.loss = loss(model_, w, train_batch_);
  m.grad_norm_sq = squared_norm(grad(model_, w, train_batch_).values());
  if (model_.is_classifier() && eval_ && eval_->size() > 0) {
    m.accuracy = accuracy(model_, w, eval_->features, eval_->labels);
  }
  return m;
}

ParamVector Evaluator::full_gradient(const ParamVector& w) const { return grad(model_, w, train_batch_); }

AsyncServer::AsyncServer(ParamVector w0, Hyperparams hp) : state_(GlobalState::initial(std::move(w0))), hp_(hp) {}

std::pair<AggregationRecord, GlobalState> AsyncServer::submit(const ClientUpdate& update, double timestamp) {
  std::lock_guard lock(mu_);
  auto [next, rec] = async_aggregate(state_, update, hp_, timestamp);
  if (rec.exceeded_k_bound) {
    log_warning("staleness " + std::to_string(rec.staleness) + " from client " + rec.client_id +
                " exceeds k_bound=" + std::to_string(hp_.k_bound));
  }
  state_ = std::move(next);
  history_.push_back(rec);
  return {std::move(rec), state_};
}

GlobalState AsyncServer::snapshot() const {
  std::lock_guard lock(mu_);
  return state_;
}

std::vector<AggregationRecord> AsyncServer::history() const {
  std::lock_guard lock(mu_);
  return history_;
}

}  // namespace fedasync
