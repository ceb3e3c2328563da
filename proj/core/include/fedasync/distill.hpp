#pragma once

// Teacher -> teaching assistants -> student distillation at desk scale.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedasync/core.hpp"
#include "fedasync/data.hpp"
#include "fedasync/models.hpp"

namespace fedasync::distill {

/// How the classification term picks its targets.
///   teacher_argmax: the predecessor's top-1 prediction is the ground truth.
///   true_labels:    the dataset labels.
enum class TargetMode { teacher_argmax, true_labels };

std::string_view to_string(TargetMode mode);
TargetMode parse_target_mode(std::string_view name);

struct TrainedModel {
  ModelSpec spec;
  ParamVector weights;
};

struct StageOptions {
  double alpha = 0.5;
  int epochs = 5;
  TargetMode target_mode = TargetMode::teacher_argmax;
  double eta = 0.1;
  int batch_size = 128;
  double momentum = 0.0;
};

/// Classification targets for `features` under `mode`.
std::vector<double> stage_targets(const TrainedModel& from, const Matrix& features,
                                  std::span<const double> true_labels, TargetMode mode);

/// alpha * CE(student, targets) + (1 - alpha) * mean ||z_s - z_from||^2 + l2.
double stage_loss(const TrainedModel& from, const ModelSpec& to_spec, const ParamVector& w, const Batch& batch,
                  double alpha, TargetMode mode);
/// Gradient of stage_loss with respect to the student parameters.
ParamVector stage_gradient(const TrainedModel& from, const ModelSpec& to_spec, const ParamVector& w,
                           const Batch& batch, double alpha, TargetMode mode);

/// Trains `to_spec` from `init` against `from`. Each epoch is
/// ceil(N / batch_size) SGD steps on batches sampled with replacement.
ParamVector train_stage(const TrainedModel& from, const ModelSpec& to_spec, const ParamVector& init,
                        const data::Dataset& dataset, const StageOptions& options, Rng& rng);

/// Plain supervised SGD on `targets` with the same step schedule as train_stage.
ParamVector train_supervised(const ModelSpec& spec, const ParamVector& init, const data::Dataset& dataset,
                             std::span<const double> targets, const StageOptions& options, Rng& rng);

struct DistillPlan {
  ModelSpec teacher;
  std::vector<ModelSpec> tas;  // 0 to 3, largest first
  ModelSpec student;
  double alpha = 0.5;
  int epochs_per_stage = 5;
  TargetMode target_mode = TargetMode::teacher_argmax;

  void validate() const;
};

enum class StageRole { teacher, assistant, student };

struct StageResult {
  std::string name;
  StageRole role = StageRole::teacher;
  TrainedModel model;
  double eval_accuracy = 0.0;
  /// Deterministic work estimate in multiply-adds: forward passes through the
  /// predecessor plus forward and backward passes through the trained model.
  double cost_madds = 0.0;
  double cumulative_cost_madds = 0.0;
  double measured_seconds = 0.0;
};

struct DistillResult {
  std::vector<StageResult> stages;

  double total_cost_madds() const { return stages.empty() ? 0.0 : stages.back().cumulative_cost_madds; }
  double total_measured_seconds() const;
};

/// Generator for a stage's initialization and batches. Depends only on the
/// seed and the role (and TA position), not on the chain length, so a student
/// trained alone and one at the end of a chain see the same randomness.
Rng stage_rng(std::uint64_t seed, StageRole role, std::size_t ta_index = 0);

/// Teacher on true labels, then each TA from its predecessor, then the student
/// from the last TA (or the teacher). Optimizer settings come from `hp`
/// (eta, batch_size, momentum, seed).
DistillResult distill_chain(const DistillPlan& plan, const data::Dataset& train, const data::Dataset& eval,
                            const Hyperparams& hp);

}  // namespace fedasync::distill
