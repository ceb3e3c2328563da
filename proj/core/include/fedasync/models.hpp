#pragma once

// Learners with hand-written gradients: the convex instances (l2 linear
// regression, logistic regression, softmax) and a small tanh network used for
// last-layer fine-tuning and distillation.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedasync/core.hpp"

namespace fedasync {

struct Batch {
  Matrix features;
  std::vector<double> labels;  // real target, or class index stored as a double

  std::size_t size() const noexcept { return labels.size(); }
};

enum class ModelKind { linear_regression, logistic_regression, softmax, two_layer };

std::string_view to_string(ModelKind kind);
/// Accepts "l2-linear-regression", "logistic-regression", "softmax-classifier", "two-layer".
ModelKind parse_model_kind(std::string_view name);

/// Architecture description. Parameter layout, row-major:
///   linear/logistic: [w(input_dim), b]
///   softmax:         [W(num_classes x input_dim), b(num_classes)]
///   two_layer:       [W1(hidden x input), b1(hidden), W2(num_classes x hidden), b2(num_classes)]
struct ModelSpec {
  ModelKind kind = ModelKind::softmax;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;  // softmax / two_layer; logistic is implicitly 2
  std::size_t hidden_dim = 0;   // two_layer only
  double l2_coeff = 0.001;
  std::vector<bool> frozen_mask;  // empty = everything trainable

  std::size_t param_count() const;
  /// Width of the logit vector produced per example.
  std::size_t num_outputs() const;
  bool is_classifier() const { return kind != ModelKind::linear_regression; }
  bool is_frozen(std::size_t i) const { return !frozen_mask.empty() && frozen_mask[i]; }
  void validate() const;
};

/// Copy of `spec` whose frozen mask freezes every parameter outside the final
/// affine layer. For single-layer models that is the identity.
ModelSpec freeze_all_but_last_layer(ModelSpec spec);

/// Small random initialization, deterministic in `rng`.
ParamVector init_weights(const ModelSpec& spec, Rng& rng);

/// Forward pass: one logit row per example.
Matrix predict_logits(const ModelSpec& spec, const ParamVector& w, const Matrix& features);
/// Top-1 class per example (argmax; logistic thresholds its single logit at 0).
std::vector<std::size_t> predict_classes(const ModelSpec& spec, const ParamVector& w, const Matrix& features);
/// Fraction of rows whose top-1 prediction equals the label.
double accuracy(const ModelSpec& spec, const ParamVector& w, const Matrix& features,
                std::span<const double> labels);

/// Mean data loss over the batch plus l2_coeff/2 * ||w||^2 on trainable coordinates.
double loss(const ModelSpec& spec, const ParamVector& w, const Batch& batch);
/// Analytic gradient of `loss`; frozen coordinates are zero.
ParamVector grad(const ModelSpec& spec, const ParamVector& w, const Batch& batch);
/// grad(w) + theta * (w - anchor), frozen coordinates zeroed.
ParamVector prox_grad(const ModelSpec& spec, const ParamVector& w, const ParamVector& anchor,
                      double theta, const Batch& batch);

/// Mean per-example data loss for given logits; fills d(loss)/d(logits) when
/// `dlogits` is non-null. Labels are validated against the model kind.
double data_loss_from_logits(const ModelSpec& spec, const Matrix& logits,
                             std::span<const double> labels, Matrix* dlogits);
/// Parameter gradient of a scalar whose logit gradient is `dlogits`.
/// No regularizer, no masking.
std::vector<double> backprop(const ModelSpec& spec, const ParamVector& w, const Matrix& features,
                             const Matrix& dlogits);
/// Adds l2_coeff * w and zeroes frozen coordinates, in place.
void finish_gradient(const ModelSpec& spec, const ParamVector& w, std::vector<double>& g);
/// l2_coeff/2 * ||w||^2 over trainable coordinates.
double l2_penalty(const ModelSpec& spec, const ParamVector& w);

/// Squared Euclidean distance between two logit vectors.
double kd_loss(std::span<const double> student_logits, std::span<const double> teacher_logits);
/// Batch form: per-row squared distance averaged over rows.
double kd_loss(const Matrix& student_logits, const Matrix& teacher_logits);
/// alpha * l_cls + (1 - alpha) * l_kd, alpha in [0, 1].
double combined_loss(double alpha, double l_cls, double l_kd);

/// One observation for the assumption-constant estimates.
struct GradientSample {
  ParamVector grad_loss;  // gradient of the loss term
  ParamVector grad_prox;  // gradient of the proximal objective at the same point
};

/// Full-objective gradient at a parameter point, used for the smoothness estimate.
struct FullGradientSample {
  ParamVector w;
  ParamVector grad;
};

struct GradientTrace {
  std::vector<GradientSample> stochastic;
  std::vector<FullGradientSample> full;
};

struct AssumptionConstants {
  double b1_sq_hat = 0.0;                // max ||grad l||^2
  double b2_sq_hat = 0.0;                // max ||grad g||^2
  std::optional<double> l_hat;           // max ||dF(v)-dF(u)|| / ||v-u||; needs two distinct points
};

/// Empirical counterparts of the bounded-gradient and smoothness assumptions.
/// Reported only; nothing is enforced.
AssumptionConstants estimate_assumption_constants(const GradientTrace& trace);

}  // namespace fedasync
