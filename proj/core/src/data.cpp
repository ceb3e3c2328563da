#include "fedasync/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

namespace fedasync::data {

namespace {

constexpr std::uint64_t kPartitionStream = 1;
constexpr std::uint64_t kHoldoutStream = 2;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_field(std::string_view field, std::size_t line_no) {
  field = trim(field);
  if (field.empty()) throw ParseError(line_no, "empty field");
  if (field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError(line_no, "not a number: '" + std::string(field) + "'");
  }
  if (!std::isfinite(value)) throw ParseError(line_no, "non-finite value");
  return value;
}

}  // namespace

void Dataset::validate() const {
  if (features.rows != labels.size()) {
    throw std::invalid_argument("dataset: " + std::to_string(features.rows) + " feature rows but " +
                                std::to_string(labels.size()) + " labels");
  }
  if (features.data.size() != features.rows * features.cols) {
    throw std::invalid_argument("dataset: ragged feature matrix");
  }
  for (double v : features.data) {
    if (!std::isfinite(v)) throw std::invalid_argument("dataset: non-finite feature");
  }
  for (double y : labels) {
    if (!std::isfinite(y)) throw std::invalid_argument("dataset: non-finite label");
    if (num_classes && (y < 0.0 || y != std::floor(y) || y >= static_cast<double>(*num_classes))) {
      throw std::invalid_argument("dataset: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(*num_classes) + ")");
    }
  }
}

Dataset generate_blobs(std::size_t num_classes, std::size_t dim, std::size_t samples_per_class,
                       double cluster_spread, std::uint64_t seed) {
  if (num_classes == 0 || dim == 0 || samples_per_class == 0) {
    throw std::invalid_argument("generate_blobs: counts must be >= 1");
  }
  if (!(std::isfinite(cluster_spread) && cluster_spread > 0.0)) {
    throw std::invalid_argument("generate_blobs: cluster_spread must be > 0");
  }
  Rng rng = make_rng(seed, 0);
  std::normal_distribution<double> unit(0.0, 1.0);

  Matrix means(num_classes, dim);
  for (double& m : means.data) m = 2.0 * unit(rng);

  Dataset ds;
  ds.num_classes = num_classes;
  ds.features = Matrix(num_classes * samples_per_class, dim);
  ds.labels.resize(num_classes * samples_per_class);
  std::size_t r = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < samples_per_class; ++i, ++r) {
      for (std::size_t j = 0; j < dim; ++j) ds.features(r, j) = means(c, j) + cluster_spread * unit(rng);
      ds.labels[r] = static_cast<double>(c);
    }
  }
  return ds;
}

std::vector<Shard> partition_iid(const Dataset& dataset, std::size_t n_clients, std::uint64_t seed) {
  if (n_clients == 0) throw std::invalid_argument("partition_iid: n_clients must be >= 1");
  if (dataset.size() == 0) throw std::invalid_argument("partition_iid: empty dataset");
  if (n_clients > dataset.size()) {
    throw std::invalid_argument("partition_iid: more clients (" + std::to_string(n_clients) +
                                ") than rows (" + std::to_string(dataset.size()) + ")");
  }
  std::vector<std::size_t> perm(dataset.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed, kPartitionStream);
  std::shuffle(perm.begin(), perm.end(), rng);

  const std::size_t base = dataset.size() / n_clients;
  const std::size_t extra = dataset.size() % n_clients;
  std::vector<Shard> shards(n_clients);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < n_clients; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    auto& s = shards[k];
    s.owner = std::to_string(k);
    s.indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(offset),
                     perm.begin() + static_cast<std::ptrdiff_t>(offset + len));
    std::sort(s.indices.begin(), s.indices.end());
    offset += len;
  }
  return shards;
}

Shard whole_dataset(const Dataset& dataset, ClientId owner) {
  Shard s;
  s.owner = std::move(owner);
  s.indices.resize(dataset.size());
  std::iota(s.indices.begin(), s.indices.end(), std::size_t{0});
  return s;
}

Batch sample_batch(const Shard& shard, const Dataset& parent, std::size_t batch_size, Rng& rng) {
  if (shard.indices.empty()) throw std::invalid_argument("sample_batch: empty shard");
  if (batch_size == 0) throw std::invalid_argument("sample_batch: batch_size must be >= 1");
  std::uniform_int_distribution<std::size_t> pick(0, shard.indices.size() - 1);
  Batch b;
  b.features = Matrix(batch_size, parent.features.cols);
  b.labels.resize(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t row = shard.indices[pick(rng)];
    if (row >= parent.size()) throw std::out_of_range("sample_batch: shard index outside dataset");
    const auto src = parent.features.row(row);
    std::copy(src.begin(), src.end(), b.features.row(i).begin());
    b.labels[i] = parent.labels[row];
  }
  return b;
}

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices) {
  Dataset out;
  out.num_classes = dataset.num_classes;
  out.features = Matrix(indices.size(), dataset.features.cols);
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t row = indices[i];
    if (row >= dataset.size()) throw std::out_of_range("subset: index outside dataset");
    const auto src = dataset.features.row(row);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.labels[i] = dataset.labels[row];
  }
  return out;
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& dataset, std::size_t holdout_rows, std::uint64_t seed) {
  if (holdout_rows >= dataset.size()) {
    throw std::invalid_argument("split_holdout: holdout must leave at least one training row");
  }
  std::vector<std::size_t> perm(dataset.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed, kHoldoutStream);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto cut = perm.begin() + static_cast<std::ptrdiff_t>(dataset.size() - holdout_rows);
  std::vector<std::size_t> keep(perm.begin(), cut);
  std::vector<std::size_t> hold(cut, perm.end());
  std::sort(keep.begin(), keep.end());
  std::sort(hold.begin(), hold.end());
  return {subset(dataset, keep), subset(dataset, hold)};
}

Dataset parse_csv(std::istream& in) {
  std::vector<double> features;
  std::vector<double> labels;
  std::size_t cols = 0;
  std::size_t line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    std::vector<double> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = view.find(',', start);
      fields.push_back(parse_field(view.substr(start, comma - start), line_no));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() < 2) throw ParseError(line_no, "need at least one feature and a label");
    if (cols == 0) {
      cols = fields.size();
    } else if (fields.size() != cols) {
      throw ParseError(line_no, "ragged row: expected " + std::to_string(cols) + " fields, got " +
                                    std::to_string(fields.size()));
    }
    features.insert(features.end(), fields.begin(), fields.end() - 1);
    labels.push_back(fields.back());
  }
  if (labels.empty()) throw ParseError(0, "csv contains no data rows");

  Dataset ds;
  ds.features = Matrix(labels.size(), cols - 1, std::move(features));
  ds.labels = std::move(labels);
  const bool integral = std::all_of(ds.labels.begin(), ds.labels.end(),
                                    [](double y) { return y >= 0.0 && y == std::floor(y); });
  if (integral) {
    ds.num_classes = static_cast<std::size_t>(*std::max_element(ds.labels.begin(), ds.labels.end())) + 1;
  }
  return ds;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  return parse_csv(in);
}

void write_csv(std::ostream& out, const Dataset& dataset) {
  char buf[40];
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    for (double v : dataset.features.row(r)) {
      std::snprintf(buf, sizeof buf, "%.17g,", v);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g\n", dataset.labels[r]);
    out << buf;
  }
}

void save_csv(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# features...,label\n";
  write_csv(out, dataset);
}

}  // namespace fedasync::data
