#pragma once

#include <functional>
#include <memory>

#include "fedasync/core.hpp"
#include "fedasync/data.hpp"
#include "fedasync/models.hpp"

namespace fedasync {

struct ClientConfig {
  ClientId client_id;
  std::shared_ptr<const data::Dataset> parent;
  data::Shard shard;
  ModelSpec model;
  Hyperparams hp;
  Rng rng;
};

/// Client half of the asynchronous protocol: receive (w_t, t), run H proximal
/// SGD iterations anchored at w_t, return (w, tau = t).
///
/// Each instance is single threaded and owns its generator; independent
/// instances share nothing mutable.
class Client {
 public:
  /// Called once per local iteration with the iterate before the step, the
  /// loss gradient and the proximal gradient.
  using StepObserver =
      std::function<void(const ParamVector& w, const ParamVector& grad_loss, const ParamVector& grad_prox)>;

  explicit Client(ClientConfig cfg);

  /// Requires hp.h_min <= H <= hp.h_max. Throws DivergenceError if an iterate
  /// stops being finite.
  ClientUpdate local_train(const ParamVector& w_t, Epoch t, int local_iterations);

  /// As local_train but starting from `start` while the proximal term stays
  /// anchored at `anchor`.
  ClientUpdate local_train_from(const ParamVector& start, const ParamVector& anchor, Epoch t,
                                int local_iterations);

  void set_step_observer(StepObserver observer) { observer_ = std::move(observer); }

  const ClientId& id() const noexcept { return cfg_.client_id; }
  std::size_t shard_size() const noexcept { return cfg_.shard.size(); }
  const ClientConfig& config() const noexcept { return cfg_; }

 private:
  ClientConfig cfg_;
  StepObserver observer_;
};

/// Sequential plain SGD over the whole dataset: `steps` iterations of
/// w <- w - eta * grad(w; batch), batches drawn like a client's. Momentum, when
/// configured, carries across all steps.
ParamVector train_centralized(const ModelSpec& model, const Hyperparams& hp, const data::Dataset& dataset,
                              ParamVector w0, std::size_t steps, Rng& rng);

}  // namespace fedasync
