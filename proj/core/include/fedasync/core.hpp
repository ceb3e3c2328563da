#pragma once

// Domain types shared by every module, plus the server's mixing arithmetic.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedasync/errors.hpp"

namespace fedasync {

using Epoch = std::uint64_t;
using ClientId = std::string;
using Rng = std::mt19937_64;

/// Deterministic generator for an independent stream derived from `seed`.
Rng make_rng(std::uint64_t seed, std::uint64_t stream);

/// Flat model parameters. Every entry is finite; constructing from a vector
/// holding NaN/Inf throws DivergenceError.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t dim) : values_(dim, 0.0) {}
  explicit ParamVector(std::vector<double> values);
  ParamVector(std::initializer_list<double> values);

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& vec() const noexcept { return values_; }
  std::vector<double> release() && { return std::move(values_); }

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<double> values_;
};

/// True when both vectors have identical bit patterns (distinguishes -0.0 and 0.0).
bool bit_equal(const ParamVector& lhs, const ParamVector& rhs);

/// Throws DimensionError unless `lhs.dim() == rhs.dim()`.
void require_same_dim(std::size_t lhs, std::size_t rhs, const char* what);

double squared_norm(std::span<const double> v);
double squared_distance(std::span<const double> u, std::span<const double> v);

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

/// Knobs of the asynchronous protocol and the local optimizer.
///
/// Defaults follow the federated fine-tuning runs: learning rate 0.001, batch 8,
/// three local iterations, 80 global epochs, a = 0.5, beta = 0.7. Plain SGD
/// (momentum 0) is the default local optimizer.
struct Hyperparams {
  double eta = 0.001;
  double beta = 0.7;      // mixing weight, (0, 1]
  double a = 0.5;         // staleness exponent
  double theta = 0.1;     // proximal coefficient
  int h_min = 3;
  int h_max = 3;
  int e_total = 80;
  int k_bound = 3;        // assumed staleness bound, observational only
  int batch_size = 8;
  double momentum = 0.0;
  double alpha_kd = 0.5;
  std::uint64_t seed = 42;

  /// Imbalance ratio h_max / h_min.
  double lambda() const { return static_cast<double>(h_max) / static_cast<double>(h_min); }

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// What a client sends after local training: (w_new, tau).
struct ClientUpdate {
  ParamVector w_new;
  Epoch tau = 0;
  ClientId client_id;
  int local_iterations_done = 0;
};

/// Server-side (w_t, t) plus bookkeeping. `t` counts aggregations since start.
struct GlobalState {
  ParamVector w;
  Epoch t = 0;
  Epoch max_staleness_seen = 0;
  std::uint64_t aggregations = 0;

  static GlobalState initial(ParamVector w0) { return GlobalState{std::move(w0), 0, 0, 0}; }
};

/// beta * (1 + t - tau)^(-a). Requires t >= tau, beta in (0, 1], a >= 0.
///
/// Any staleness function must equal 1 at zero staleness and decrease
/// monotonically; only the polynomial form is provided. Extreme staleness may
/// make the result underflow toward zero; it is passed through unchanged.
double staleness_weight(double beta, double a, Epoch t, Epoch tau);

/// (1 - beta_t) * prev + beta_t * next, componentwise.
ParamVector mix(const ParamVector& prev, const ParamVector& next, double beta_t);

}  // namespace fedasync
