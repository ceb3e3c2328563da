#pragma once

// Datasets, IID client shards and batch sampling. All randomness flows through
// explicitly passed seeds or generators.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fedasync/core.hpp"
#include "fedasync/models.hpp"

namespace fedasync::data {

struct Dataset {
  Matrix features;
  std::vector<double> labels;
  std::optional<std::size_t> num_classes;  // absent for regression

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols; }
  /// Throws std::invalid_argument on ragged rows, non-finite values or bad labels.
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

/// A client's local data: indices into a parent Dataset, sorted ascending.
struct Shard {
  ClientId owner;
  std::vector<std::size_t> indices;

  std::size_t size() const noexcept { return indices.size(); }
};

/// Isotropic Gaussian clusters, one per class. Cluster means are drawn from
/// N(0, 4 I) and points from N(mean, spread^2 I). Rows are ordered by class.
Dataset generate_blobs(std::size_t num_classes, std::size_t dim, std::size_t samples_per_class,
                       double cluster_spread, std::uint64_t seed);

/// Random permutation split into `n_clients` shards whose sizes differ by at
/// most one (the first N mod n shards get the extra row).
std::vector<Shard> partition_iid(const Dataset& dataset, std::size_t n_clients, std::uint64_t seed);

/// Shard covering every row of `dataset` in order.
Shard whole_dataset(const Dataset& dataset, ClientId owner = "0");

/// `batch_size` rows drawn uniformly with replacement from the shard.
Batch sample_batch(const Shard& shard, const Dataset& parent, std::size_t batch_size, Rng& rng);

/// Rows `indices` of `dataset`, in that order.
Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices);

/// Random split into (remaining, holdout) with exactly `holdout_rows` held out.
std::pair<Dataset, Dataset> split_holdout(const Dataset& dataset, std::size_t holdout_rows, std::uint64_t seed);

/// Numeric CSV, last column is the label, optional '#' comment/header lines.
/// num_classes = max label + 1 when every label is a non-negative integer.
Dataset load_csv(const std::filesystem::path& path);
Dataset parse_csv(std::istream& in);
void save_csv(const std::filesystem::path& path, const Dataset& dataset);
void write_csv(std::ostream& out, const Dataset& dataset);

}  // namespace fedasync::data
