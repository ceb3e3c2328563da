#include "fedasync/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace fedasync {

namespace {

void require_finite_entries(std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw DivergenceError("non-finite parameter at coordinate " + std::to_string(i));
    }
  }
}

}  // namespace

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

ParamVector::ParamVector(std::vector<double> values) : values_(std::move(values)) {
  require_finite_entries(values_);
}

ParamVector::ParamVector(std::initializer_list<double> values) : values_(values) {
  require_finite_entries(values_);
}

bool bit_equal(const ParamVector& lhs, const ParamVector& rhs) {
  return lhs.dim() == rhs.dim() &&
         (lhs.dim() == 0 ||
          std::memcmp(lhs.vec().data(), rhs.vec().data(), lhs.dim() * sizeof(double)) == 0);
}

void require_same_dim(std::size_t lhs, std::size_t rhs, const char* what) {
  if (lhs != rhs) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" + std::to_string(lhs) +
                         " vs " + std::to_string(rhs) + ")");
  }
}

double squared_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

double squared_distance(std::span<const double> u, std::span<const double> v) {
  require_same_dim(u.size(), v.size(), "squared_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    acc += d * d;
  }
  return acc;
}

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) {
    throw DimensionError("matrix: expected " + std::to_string(r * c) + " values, got " +
                         std::to_string(data.size()));
  }
}

void Hyperparams::validate() const {
  auto fail = [](const char* key, const std::string& msg) { throw ConfigError(key, msg); };
  if (!(std::isfinite(eta) && eta > 0.0)) fail("eta", "must be > 0");
  if (!(std::isfinite(beta) && beta > 0.0 && beta <= 1.0)) fail("beta", "must lie in (0, 1]");
  if (!(std::isfinite(a) && a >= 0.0)) fail("a", "must be >= 0");
  if (!(std::isfinite(theta) && theta >= 0.0)) fail("theta", "must be >= 0");
  if (h_min < 1) fail("h_min", "must be >= 1");
  if (h_max < h_min) fail("h_max", "must be >= h_min");
  if (e_total < 1) fail("e_total", "must be >= 1");
  if (k_bound < 0) fail("k_bound", "must be >= 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(std::isfinite(momentum) && momentum >= 0.0 && momentum < 1.0)) {
    fail("momentum", "must lie in [0, 1)");
  }
  if (!(std::isfinite(alpha_kd) && alpha_kd >= 0.0 && alpha_kd <= 1.0)) {
    fail("alpha_kd", "must lie in [0, 1]");
  }
}

double staleness_weight(double beta, double a, Epoch t, Epoch tau) {
  if (!std::isfinite(beta) || !std::isfinite(a)) {
    throw std::invalid_argument("staleness_weight: non-finite beta or a");
  }
  if (t < tau) {
    throw ProtocolError("stale_protocol_violation",
                        "update stamped tau=" + std::to_string(tau) +
                            " is ahead of server epoch t=" + std::to_string(t));
  }
  if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("staleness_weight: beta outside (0, 1]");
  if (a < 0.0) throw std::invalid_argument("staleness_weight: a < 0");
  if (a == 0.0) return beta;
  const double staleness = static_cast<double>(t - tau);
  return beta * std::pow(1.0 + staleness, -a);
}

ParamVector mix(const ParamVector& prev, const ParamVector& next, double beta_t) {
  require_same_dim(prev.dim(), next.dim(), "mix");
  if (!(beta_t >= 0.0 && beta_t <= 1.0)) throw std::invalid_argument("mix: beta_t outside [0, 1]");
  const double keep = 1.0 - beta_t;
  std::vector<double> out(prev.dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = prev[i];
    const double n = next[i];
    if (p == n) {
      out[i] = p;
      continue;
    }
    // Rounding can push the blend one ulp outside [p, n].
    out[i] = std::clamp(keep * p + beta_t * n, std::min(p, n), std::max(p, n));
  }
  return ParamVector(std::move(out));
}

}  // namespace fedasync
