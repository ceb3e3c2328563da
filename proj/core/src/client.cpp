#include "fedasync/client.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fedasync {

namespace {

void require_finite_step(const std::vector<double>& w, const ClientId& id, int step) {
  for (double v : w) {
    if (!std::isfinite(v)) {
      throw DivergenceError("client " + id + ": non-finite parameters after local iteration " +
                            std::to_string(step));
    }
  }
}

}  // namespace

Client::Client(ClientConfig cfg) : cfg_(std::move(cfg)) {
  if (!cfg_.parent) throw std::invalid_argument("client: missing dataset");
  if (cfg_.shard.indices.empty()) throw std::invalid_argument("client " + cfg_.client_id + ": empty shard");
  cfg_.model.validate();
}

ClientUpdate Client::local_train(const ParamVector& w_t, Epoch t, int local_iterations) {
  return local_train_from(w_t, w_t, t, local_iterations);
}

ClientUpdate Client::local_train_from(const ParamVector& start, const ParamVector& anchor, Epoch t,
                                      int local_iterations) {
  const auto& hp = cfg_.hp;
  if (local_iterations < hp.h_min || local_iterations > hp.h_max) {
    throw std::invalid_argument("client " + cfg_.client_id + ": H=" + std::to_string(local_iterations) +
                                " outside [" + std::to_string(hp.h_min) + ", " + std::to_string(hp.h_max) + "]");
  }
  require_same_dim(start.dim(), cfg_.model.param_count(), "local_train start");
  require_same_dim(anchor.dim(), start.dim(), "local_train anchor");

  ParamVector w = start;
  std::vector<double> velocity;
  if (hp.momentum != 0.0) velocity.assign(w.dim(), 0.0);

  for (int h = 1; h <= local_iterations; ++h) {
    const Batch batch = data::sample_batch(cfg_.shard, *cfg_.parent, static_cast<std::size_t>(hp.batch_size),
                                           cfg_.rng);
    ParamVector step;
    try {
      if (observer_) {
        ParamVector g = grad(cfg_.model, w, batch);
        step = prox_grad(cfg_.model, w, anchor, hp.theta, batch);
        observer_(w, g, step);
      } else {
        step = prox_grad(cfg_.model, w, anchor, hp.theta, batch);
      }
    } catch (const DivergenceError& e) {
      throw DivergenceError("client " + cfg_.client_id + ": non-finite gradient at local iteration " +
                            std::to_string(h) + " (" + e.what() + ")");
    }

    std::vector<double> next = std::move(w).release();
    if (velocity.empty()) {
      for (std::size_t i = 0; i < next.size(); ++i) next[i] -= hp.eta * step[i];
    } else {
      for (std::size_t i = 0; i < next.size(); ++i) {
        velocity[i] = hp.momentum * velocity[i] + step[i];
        next[i] -= hp.eta * velocity[i];
      }
    }
    require_finite_step(next, cfg_.client_id, h);
    w = ParamVector(std::move(next));
  }
  return ClientUpdate{std::move(w), t, cfg_.client_id, local_iterations};
}

ParamVector train_centralized(const ModelSpec& model, const Hyperparams& hp, const data::Dataset& dataset,
                              ParamVector w0, std::size_t steps, Rng& rng) {
  const data::Shard all = data::whole_dataset(dataset);
  std::vector<double> w = std::move(w0).release();
  std::vector<double> velocity;
  if (hp.momentum != 0.0) velocity.assign(w.size(), 0.0);
  for (std::size_t s = 0; s < steps; ++s) {
    const Batch batch = data::sample_batch(all, dataset, static_cast<std::size_t>(hp.batch_size), rng);
    const ParamVector current(std::move(w));
    const ParamVector g = grad(model, current, batch);
    w = current.vec();
    if (velocity.empty()) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= hp.eta * g[i];
    } else {
      for (std::size_t i = 0; i < w.size(); ++i) {
        velocity[i] = hp.momentum * velocity[i] + g[i];
        w[i] -= hp.eta * velocity[i];
      }
    }
    for (double v : w) {
      if (!std::isfinite(v)) throw DivergenceError("centralized SGD: non-finite parameters at step " + std::to_string(s + 1));
    }
  }
  return ParamVector(std::move(w));
}

}  // namespace fedasync
