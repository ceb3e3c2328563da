#include "fedasync/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedasync {

namespace {

// Offsets into the flat parameter vector of a two-layer model.
struct TwoLayerLayout {
  std::size_t w1, b1, w2, b2, end;
};

TwoLayerLayout two_layer_layout(const ModelSpec& s) {
  TwoLayerLayout l{};
  l.w1 = 0;
  l.b1 = l.w1 + s.hidden_dim * s.input_dim;
  l.w2 = l.b1 + s.hidden_dim;
  l.b2 = l.w2 + s.num_classes * s.hidden_dim;
  l.end = l.b2 + s.num_classes;
  return l;
}

void check_inputs(const ModelSpec& spec, const ParamVector& w, const Matrix& features) {
  require_same_dim(w.dim(), spec.param_count(), "model parameters");
  require_same_dim(features.cols, spec.input_dim, "feature columns");
}

// Affine map out = W x + b for every row of `in`; W is (out_dim x in_dim), row-major.
Matrix affine(const double* weights, const double* bias, std::size_t out_dim, const Matrix& in) {
  Matrix out(in.rows, out_dim);
  for (std::size_t r = 0; r < in.rows; ++r) {
    const auto x = in.row(r);
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wrow = weights + o * in.cols;
      double z = bias[o];
      for (std::size_t c = 0; c < in.cols; ++c) z += wrow[c] * x[c];
      out(r, o) = z;
    }
  }
  return out;
}

// Accumulates dW += dout^T in and db += column sums of dout.
void affine_backward(const Matrix& in, const Matrix& dout, double* dweights, double* dbias) {
  for (std::size_t r = 0; r < in.rows; ++r) {
    const auto x = in.row(r);
    for (std::size_t o = 0; o < dout.cols; ++o) {
      const double d = dout(r, o);
      dbias[o] += d;
      double* drow = dweights + o * in.cols;
      for (std::size_t c = 0; c < in.cols; ++c) drow[c] += d * x[c];
    }
  }
}

Matrix hidden_activations(const ModelSpec& spec, const ParamVector& w, const Matrix& features) {
  const auto l = two_layer_layout(spec);
  const double* p = w.vec().data();
  Matrix h = affine(p + l.w1, p + l.b1, spec.hidden_dim, features);
  for (double& v : h.data) v = std::tanh(v);
  return h;
}

std::size_t class_index(const ModelSpec& spec, double label) {
  const std::size_t classes = spec.kind == ModelKind::logistic_regression ? 2 : spec.num_classes;
  if (!(label >= 0.0) || label != std::floor(label) || label >= static_cast<double>(classes)) {
    throw std::invalid_argument("label " + std::to_string(label) + " outside class range [0, " +
                                std::to_string(classes) + ")");
  }
  return static_cast<std::size_t>(label);
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::linear_regression: return "l2-linear-regression";
    case ModelKind::logistic_regression: return "logistic-regression";
    case ModelKind::softmax: return "softmax-classifier";
    case ModelKind::two_layer: return "two-layer";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "l2-linear-regression" || name == "linear-regression") return ModelKind::linear_regression;
  if (name == "logistic-regression" || name == "logistic") return ModelKind::logistic_regression;
  if (name == "softmax-classifier" || name == "softmax") return ModelKind::softmax;
  if (name == "two-layer") return ModelKind::two_layer;
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "'");
}

std::size_t ModelSpec::param_count() const {
  switch (kind) {
    case ModelKind::linear_regression:
    case ModelKind::logistic_regression:
      return input_dim + 1;
    case ModelKind::softmax:
      return num_classes * (input_dim + 1);
    case ModelKind::two_layer:
      return two_layer_layout(*this).end;
  }
  return 0;
}

std::size_t ModelSpec::num_outputs() const {
  switch (kind) {
    case ModelKind::linear_regression:
    case ModelKind::logistic_regression:
      return 1;
    case ModelKind::softmax:
    case ModelKind::two_layer:
      return num_classes;
  }
  return 0;
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw std::invalid_argument("model: input_dim must be >= 1");
  if ((kind == ModelKind::softmax || kind == ModelKind::two_layer) && num_classes < 2) {
    throw std::invalid_argument("model: num_classes must be >= 2");
  }
  if (kind == ModelKind::two_layer && hidden_dim == 0) {
    throw std::invalid_argument("model: hidden_dim must be >= 1");
  }
  if (!(std::isfinite(l2_coeff) && l2_coeff >= 0.0)) {
    throw std::invalid_argument("model: l2_coeff must be >= 0");
  }
  if (!frozen_mask.empty()) {
    require_same_dim(frozen_mask.size(), param_count(), "frozen_mask");
    if (std::all_of(frozen_mask.begin(), frozen_mask.end(), [](bool f) { return f; })) {
      throw std::invalid_argument("model: frozen_mask leaves no trainable parameter");
    }
  }
}

ModelSpec freeze_all_but_last_layer(ModelSpec spec) {
  spec.frozen_mask.assign(spec.param_count(), false);
  if (spec.kind == ModelKind::two_layer) {
    const auto l = two_layer_layout(spec);
    std::fill(spec.frozen_mask.begin(), spec.frozen_mask.begin() + static_cast<std::ptrdiff_t>(l.w2), true);
  }
  return spec;
}

ParamVector init_weights(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  std::vector<double> w(spec.param_count(), 0.0);
  if (spec.kind == ModelKind::two_layer) {
    const auto l = two_layer_layout(spec);
    std::normal_distribution<double> first(0.0, 1.0 / std::sqrt(static_cast<double>(spec.input_dim)));
    std::normal_distribution<double> second(0.0, 1.0 / std::sqrt(static_cast<double>(spec.hidden_dim)));
    for (std::size_t i = l.w1; i < l.b1; ++i) w[i] = first(rng);
    for (std::size_t i = l.w2; i < l.b2; ++i) w[i] = second(rng);
  } else {
    std::normal_distribution<double> dist(0.0, 0.01);
    for (double& v : w) v = dist(rng);
  }
  return ParamVector(std::move(w));
}

Matrix predict_logits(const ModelSpec& spec, const ParamVector& w, const Matrix& features) {
  check_inputs(spec, w, features);
  const double* p = w.vec().data();
  switch (spec.kind) {
    case ModelKind::linear_regression:
    case ModelKind::logistic_regression:
      return affine(p, p + spec.input_dim, 1, features);
    case ModelKind::softmax:
      return affine(p, p + spec.num_classes * spec.input_dim, spec.num_classes, features);
    case ModelKind::two_layer: {
      const auto l = two_layer_layout(spec);
      const Matrix h = hidden_activations(spec, w, features);
      return affine(p + l.w2, p + l.b2, spec.num_classes, h);
    }
  }
  return {};
}

std::vector<std::size_t> predict_classes(const ModelSpec& spec, const ParamVector& w, const Matrix& features) {
  if (!spec.is_classifier()) throw std::invalid_argument("predict_classes: regression model");
  const Matrix z = predict_logits(spec, w, features);
  std::vector<std::size_t> out(z.rows);
  for (std::size_t r = 0; r < z.rows; ++r) {
    if (spec.kind == ModelKind::logistic_regression) {
      out[r] = z(r, 0) > 0.0 ? 1 : 0;
    } else {
      const auto row = z.row(r);
      out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  }
  return out;
}

double accuracy(const ModelSpec& spec, const ParamVector& w, const Matrix& features,
                std::span<const double> labels) {
  require_same_dim(features.rows, labels.size(), "accuracy labels");
  if (labels.empty()) return 0.0;
  const auto predicted = predict_classes(spec, w, features);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (static_cast<double>(predicted[r]) == labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double data_loss_from_logits(const ModelSpec& spec, const Matrix& logits,
                             std::span<const double> labels, Matrix* dlogits) {
  require_same_dim(logits.rows, labels.size(), "batch labels");
  require_same_dim(logits.cols, spec.num_outputs(), "logit width");
  const std::size_t n = logits.rows;
  if (n == 0) throw std::invalid_argument("loss: empty batch");
  const double inv_n = 1.0 / static_cast<double>(n);
  if (dlogits) *dlogits = Matrix(n, logits.cols);

  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    switch (spec.kind) {
      case ModelKind::linear_regression: {
        const double diff = logits(r, 0) - labels[r];
        total += 0.5 * diff * diff;
        if (dlogits) (*dlogits)(r, 0) = diff * inv_n;
        break;
      }
      case ModelKind::logistic_regression: {
        const double y = static_cast<double>(class_index(spec, labels[r]));
        const double z = logits(r, 0);
        total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        if (dlogits) {
          const double sigma = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
          (*dlogits)(r, 0) = (sigma - y) * inv_n;
        }
        break;
      }
      case ModelKind::softmax:
      case ModelKind::two_layer: {
        const std::size_t y = class_index(spec, labels[r]);
        const auto z = logits.row(r);
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - zmax);
        const double lse = zmax + std::log(sum);
        total += lse - z[y];
        if (dlogits) {
          for (std::size_t c = 0; c < z.size(); ++c) {
            const double p = std::exp(z[c] - lse);
            (*dlogits)(r, c) = (p - (c == y ? 1.0 : 0.0)) * inv_n;
          }
        }
        break;
      }
    }
  }
  return total * inv_n;
}

std::vector<double> backprop(const ModelSpec& spec, const ParamVector& w, const Matrix& features,
                             const Matrix& dlogits) {
  check_inputs(spec, w, features);
  require_same_dim(dlogits.rows, features.rows, "dlogits rows");
  require_same_dim(dlogits.cols, spec.num_outputs(), "dlogits width");
  std::vector<double> g(spec.param_count(), 0.0);
  double* dg = g.data();
  switch (spec.kind) {
    case ModelKind::linear_regression:
    case ModelKind::logistic_regression:
      affine_backward(features, dlogits, dg, dg + spec.input_dim);
      break;
    case ModelKind::softmax:
      affine_backward(features, dlogits, dg, dg + spec.num_classes * spec.input_dim);
      break;
    case ModelKind::two_layer: {
      const auto l = two_layer_layout(spec);
      const Matrix h = hidden_activations(spec, w, features);
      affine_backward(h, dlogits, dg + l.w2, dg + l.b2);
      const double* w2 = w.vec().data() + l.w2;
      Matrix dpre(h.rows, spec.hidden_dim);
      for (std::size_t r = 0; r < h.rows; ++r) {
        for (std::size_t j = 0; j < spec.hidden_dim; ++j) {
          double dh = 0.0;
          for (std::size_t c = 0; c < spec.num_classes; ++c) dh += w2[c * spec.hidden_dim + j] * dlogits(r, c);
          const double hv = h(r, j);
          dpre(r, j) = dh * (1.0 - hv * hv);
        }
      }
      affine_backward(features, dpre, dg + l.w1, dg + l.b1);
      break;
    }
  }
  return g;
}

void finish_gradient(const ModelSpec& spec, const ParamVector& w, std::vector<double>& g) {
  require_same_dim(g.size(), w.dim(), "gradient");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (spec.is_frozen(i)) {
      g[i] = 0.0;
    } else if (spec.l2_coeff != 0.0) {
      g[i] += spec.l2_coeff * w[i];
    }
  }
}

double l2_penalty(const ModelSpec& spec, const ParamVector& w) {
  if (spec.l2_coeff == 0.0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < w.dim(); ++i) {
    if (!spec.is_frozen(i)) acc += w[i] * w[i];
  }
  return 0.5 * spec.l2_coeff * acc;
}

double loss(const ModelSpec& spec, const ParamVector& w, const Batch& batch) {
  const Matrix z = predict_logits(spec, w, batch.features);
  return data_loss_from_logits(spec, z, batch.labels, nullptr) + l2_penalty(spec, w);
}

ParamVector grad(const ModelSpec& spec, const ParamVector& w, const Batch& batch) {
  const Matrix z = predict_logits(spec, w, batch.features);
  Matrix dz;
  data_loss_from_logits(spec, z, batch.labels, &dz);
  std::vector<double> g = backprop(spec, w, batch.features, dz);
  finish_gradient(spec, w, g);
  return ParamVector(std::move(g));
}

ParamVector prox_grad(const ModelSpec& spec, const ParamVector& w, const ParamVector& anchor,
                      double theta, const Batch& batch) {
  require_same_dim(w.dim(), anchor.dim(), "prox_grad anchor");
  if (!(theta >= 0.0)) throw std::invalid_argument("prox_grad: theta must be >= 0");
  std::vector<double> g = std::move(grad(spec, w, batch)).release();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (spec.is_frozen(i)) continue;
    g[i] = g[i] + theta * (w[i] - anchor[i]);
  }
  return ParamVector(std::move(g));
}

double kd_loss(std::span<const double> student_logits, std::span<const double> teacher_logits) {
  require_same_dim(student_logits.size(), teacher_logits.size(), "kd_loss");
  return squared_distance(student_logits, teacher_logits);
}

double kd_loss(const Matrix& student_logits, const Matrix& teacher_logits) {
  require_same_dim(student_logits.rows, teacher_logits.rows, "kd_loss rows");
  require_same_dim(student_logits.cols, teacher_logits.cols, "kd_loss width");
  if (student_logits.rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < student_logits.rows; ++r) {
    total += kd_loss(student_logits.row(r), teacher_logits.row(r));
  }
  return total / static_cast<double>(student_logits.rows);
}

double combined_loss(double alpha, double l_cls, double l_kd) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("combined_loss: alpha outside [0, 1]");
  return alpha * l_cls + (1.0 - alpha) * l_kd;
}

AssumptionConstants estimate_assumption_constants(const GradientTrace& trace) {
  if (trace.stochastic.empty() && trace.full.empty()) {
    throw std::invalid_argument("estimate_assumption_constants: empty trace");
  }
  AssumptionConstants out;
  for (const auto& s : trace.stochastic) {
    out.b1_sq_hat = std::max(out.b1_sq_hat, squared_norm(s.grad_loss.values()));
    out.b2_sq_hat = std::max(out.b2_sq_hat, squared_norm(s.grad_prox.values()));
  }
  for (std::size_t i = 0; i < trace.full.size(); ++i) {
    for (std::size_t j = i + 1; j < trace.full.size(); ++j) {
      const auto& u = trace.full[i];
      const auto& v = trace.full[j];
      const double dw = squared_distance(v.w.values(), u.w.values());
      if (dw == 0.0) continue;
      const double dg = squared_distance(v.grad.values(), u.grad.values());
      const double ratio = std::sqrt(dg / dw);
      out.l_hat = std::max(out.l_hat.value_or(0.0), ratio);
    }
  }
  return out;
}

}  // namespace fedasync
