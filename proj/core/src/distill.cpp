#include "fedasync/distill.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fedasync::distill {

namespace {

constexpr std::uint64_t kTeacherStream = 1000;
constexpr std::uint64_t kAssistantStreamBase = 1100;
constexpr std::uint64_t kStudentStream = 1200;

void require_matching_logits(const ModelSpec& from, const ModelSpec& to) {
  if (from.num_outputs() != to.num_outputs() || !from.is_classifier() || !to.is_classifier()) {
    throw std::invalid_argument("distillation: class-count mismatch (" + std::to_string(from.num_outputs()) +
                                " vs " + std::to_string(to.num_outputs()) + " logits)");
  }
}

std::size_t steps_per_epoch(std::size_t rows, int batch_size) {
  const auto b = static_cast<std::size_t>(batch_size);
  return (rows + b - 1) / b;
}

void validate_options(const StageOptions& o) {
  if (!(o.alpha >= 0.0 && o.alpha <= 1.0)) throw std::invalid_argument("distillation: alpha outside [0, 1]");
  if (o.epochs < 0) throw std::invalid_argument("distillation: epochs must be >= 0");
  if (o.batch_size < 1) throw std::invalid_argument("distillation: batch_size must be >= 1");
  if (!(o.eta > 0.0)) throw std::invalid_argument("distillation: eta must be > 0");
  if (!(o.momentum >= 0.0 && o.momentum < 1.0)) throw std::invalid_argument("distillation: momentum outside [0, 1)");
}

// SGD driver shared by the supervised and distillation stages.
template <typename GradientFn>
ParamVector run_sgd(const ModelSpec& spec, const ParamVector& init, const data::Dataset& dataset,
                    const StageOptions& o, Rng& rng, GradientFn&& gradient) {
  validate_options(o);
  require_same_dim(init.dim(), spec.param_count(), "stage initialization");
  const data::Shard all = data::whole_dataset(dataset);
  const std::size_t steps = steps_per_epoch(dataset.size(), o.batch_size) * static_cast<std::size_t>(o.epochs);
  std::vector<double> velocity;
  if (o.momentum != 0.0) velocity.assign(init.dim(), 0.0);

  ParamVector w = init;
  for (std::size_t s = 0; s < steps; ++s) {
    const Batch batch = data::sample_batch(all, dataset, static_cast<std::size_t>(o.batch_size), rng);
    const ParamVector g = gradient(w, batch);
    std::vector<double> next = std::move(w).release();
    if (velocity.empty()) {
      for (std::size_t i = 0; i < next.size(); ++i) next[i] -= o.eta * g[i];
    } else {
      for (std::size_t i = 0; i < next.size(); ++i) {
        velocity[i] = o.momentum * velocity[i] + g[i];
        next[i] -= o.eta * velocity[i];
      }
    }
    w = ParamVector(std::move(next));
  }
  return w;
}

double forward_madds(const ModelSpec& spec) { return static_cast<double>(spec.param_count()); }

double stage_cost(const ModelSpec* from, const ModelSpec& to, std::size_t rows, const StageOptions& o) {
  const double examples = static_cast<double>(steps_per_epoch(rows, o.batch_size)) * static_cast<double>(o.epochs) *
                          static_cast<double>(o.batch_size);
  const double per_example = (from ? forward_madds(*from) : 0.0) + 3.0 * forward_madds(to);
  return examples * per_example;
}

}  // namespace

std::string_view to_string(TargetMode mode) {
  return mode == TargetMode::teacher_argmax ? "teacher-argmax" : "true-labels";
}

TargetMode parse_target_mode(std::string_view name) {
  if (name == "teacher-argmax") return TargetMode::teacher_argmax;
  if (name == "true-labels") return TargetMode::true_labels;
  throw std::invalid_argument("unknown target mode '" + std::string(name) + "'");
}

std::vector<double> stage_targets(const TrainedModel& from, const Matrix& features,
                                  std::span<const double> true_labels, TargetMode mode) {
  if (mode == TargetMode::true_labels) return {true_labels.begin(), true_labels.end()};
  const auto classes = predict_classes(from.spec, from.weights, features);
  return {classes.begin(), classes.end()};
}

double stage_loss(const TrainedModel& from, const ModelSpec& to_spec, const ParamVector& w, const Batch& batch,
                  double alpha, TargetMode mode) {
  require_matching_logits(from.spec, to_spec);
  const Matrix zs = predict_logits(to_spec, w, batch.features);
  const Matrix zt = predict_logits(from.spec, from.weights, batch.features);
  const auto targets = stage_targets(from, batch.features, batch.labels, mode);
  const double l_cls = data_loss_from_logits(to_spec, zs, targets, nullptr);
  return combined_loss(alpha, l_cls, kd_loss(zs, zt)) + l2_penalty(to_spec, w);
}

ParamVector stage_gradient(const TrainedModel& from, const ModelSpec& to_spec, const ParamVector& w,
                           const Batch& batch, double alpha, TargetMode mode) {
  require_matching_logits(from.spec, to_spec);
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("stage_gradient: alpha outside [0, 1]");
  const Matrix zs = predict_logits(to_spec, w, batch.features);
  const Matrix zt = predict_logits(from.spec, from.weights, batch.features);
  const auto targets = stage_targets(from, batch.features, batch.labels, mode);

  Matrix dlogits;
  data_loss_from_logits(to_spec, zs, targets, &dlogits);
  const double kd_scale = 2.0 / static_cast<double>(zs.rows);
  for (std::size_t i = 0; i < dlogits.data.size(); ++i) {
    const double dkd = kd_scale * (zs.data[i] - zt.data[i]);
    dlogits.data[i] = alpha * dlogits.data[i] + (1.0 - alpha) * dkd;
  }
  std::vector<double> g = backprop(to_spec, w, batch.features, dlogits);
  finish_gradient(to_spec, w, g);
  return ParamVector(std::move(g));
}

ParamVector train_stage(const TrainedModel& from, const ModelSpec& to_spec, const ParamVector& init,
                        const data::Dataset& dataset, const StageOptions& options, Rng& rng) {
  require_matching_logits(from.spec, to_spec);
  return run_sgd(to_spec, init, dataset, options, rng, [&](const ParamVector& w, const Batch& batch) {
    return stage_gradient(from, to_spec, w, batch, options.alpha, options.target_mode);
  });
}

ParamVector train_supervised(const ModelSpec& spec, const ParamVector& init, const data::Dataset& dataset,
                             std::span<const double> targets, const StageOptions& options, Rng& rng) {
  require_same_dim(targets.size(), dataset.size(), "supervised targets");
  data::Dataset relabeled = dataset;
  relabeled.labels.assign(targets.begin(), targets.end());
  return run_sgd(spec, init, relabeled, options, rng,
                 [&](const ParamVector& w, const Batch& batch) { return grad(spec, w, batch); });
}

void DistillPlan::validate() const {
  if (tas.size() > 3) throw std::invalid_argument("distill plan: at most 3 teaching assistants");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("distill plan: alpha outside [0, 1]");
  if (epochs_per_stage < 1) throw std::invalid_argument("distill plan: epochs_per_stage must be >= 1");
  teacher.validate();
  student.validate();
  const ModelSpec* prev = &teacher;
  for (const auto& ta : tas) {
    ta.validate();
    require_matching_logits(*prev, ta);
    prev = &ta;
  }
  require_matching_logits(*prev, student);
}

double DistillResult::total_measured_seconds() const {
  double total = 0.0;
  for (const auto& s : stages) total += s.measured_seconds;
  return total;
}

Rng stage_rng(std::uint64_t seed, StageRole role, std::size_t ta_index) {
  switch (role) {
    case StageRole::teacher: return make_rng(seed, kTeacherStream);
    case StageRole::assistant: return make_rng(seed, kAssistantStreamBase + ta_index);
    case StageRole::student: return make_rng(seed, kStudentStream);
  }
  return make_rng(seed, kStudentStream);
}

DistillResult distill_chain(const DistillPlan& plan, const data::Dataset& train, const data::Dataset& eval,
                            const Hyperparams& hp) {
  plan.validate();
  StageOptions options;
  options.alpha = plan.alpha;
  options.epochs = plan.epochs_per_stage;
  options.target_mode = plan.target_mode;
  options.eta = hp.eta;
  options.batch_size = hp.batch_size;
  options.momentum = hp.momentum;

  DistillResult result;
  double cumulative = 0.0;
  auto record = [&](std::string name, StageRole role, const ModelSpec& spec, ParamVector w, const ModelSpec* from,
                    double seconds) {
    StageResult s;
    s.name = std::move(name);
    s.role = role;
    s.model = TrainedModel{spec, std::move(w)};
    s.eval_accuracy = eval.size() > 0 ? accuracy(spec, s.model.weights, eval.features, eval.labels) : 0.0;
    s.cost_madds = stage_cost(from, spec, train.size(), options);
    cumulative += s.cost_madds;
    s.cumulative_cost_madds = cumulative;
    s.measured_seconds = seconds;
    result.stages.push_back(std::move(s));
  };
  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point start) {
    return std::chrono::duration<double>(clock::now() - start).count();
  };

  {
    const auto start = clock::now();
    Rng rng = stage_rng(hp.seed, StageRole::teacher);
    const ParamVector init = init_weights(plan.teacher, rng);
    ParamVector w = train_supervised(plan.teacher, init, train, train.labels, options, rng);
    record("teacher", StageRole::teacher, plan.teacher, std::move(w), nullptr, seconds_since(start));
  }
  for (std::size_t i = 0; i < plan.tas.size(); ++i) {
    const auto start = clock::now();
    const TrainedModel from = result.stages.back().model;
    Rng rng = stage_rng(hp.seed, StageRole::assistant, i);
    const ParamVector init = init_weights(plan.tas[i], rng);
    ParamVector w = train_stage(from, plan.tas[i], init, train, options, rng);
    record("ta" + std::to_string(i + 1), StageRole::assistant, plan.tas[i], std::move(w), &from.spec,
           seconds_since(start));
  }
  {
    const auto start = clock::now();
    const TrainedModel from = result.stages.back().model;
    Rng rng = stage_rng(hp.seed, StageRole::student);
    const ParamVector init = init_weights(plan.student, rng);
    ParamVector w = train_stage(from, plan.student, init, train, options, rng);
    record("student", StageRole::student, plan.student, std::move(w), &from.spec, seconds_since(start));
  }
  return result;
}

}  // namespace fedasync::distill
