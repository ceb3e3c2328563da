#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "fedasync/client.hpp"
#include "fedasync/data.hpp"
#include "fixtures.hpp"

using namespace fedasync;
using namespace fedasync::data;

TEST(Blobs, SameSeedSameBytes) {
  const Dataset a = generate_blobs(2, 2, 10, 1.0, 99);
  const Dataset b = generate_blobs(2, 2, 10, 1.0, 99);
  ASSERT_EQ(a.size(), 20u);
  EXPECT_EQ(a.features.data.size(), b.features.data.size());
  EXPECT_EQ(std::memcmp(a.features.data.data(), b.features.data.data(), a.features.data.size() * sizeof(double)), 0);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.num_classes, std::optional<std::size_t>(2));
  EXPECT_FALSE(a == generate_blobs(2, 2, 10, 1.0, 100));
}

TEST(Blobs, RowsOrderedByClass) {
  const Dataset d = generate_blobs(3, 4, 5, 1.0, 1);
  for (std::size_t r = 0; r < d.size(); ++r) EXPECT_EQ(d.labels[r], static_cast<double>(r / 5));
}

TEST(Blobs, RejectsBadArguments) {
  EXPECT_THROW(generate_blobs(0, 2, 10, 1.0, 1), std::invalid_argument);
  EXPECT_THROW(generate_blobs(2, 2, 10, 0.0, 1), std::invalid_argument);
}

TEST(Blobs, TightClustersAreLinearlySeparable) {
  const Dataset d = generate_blobs(3, 5, 50, 1e-3, 7);
  ModelSpec spec;
  spec.kind = ModelKind::softmax;
  spec.input_dim = 5;
  spec.num_classes = 3;
  Hyperparams hp;
  hp.eta = 0.1;
  Rng rng(1);
  const ParamVector w = train_centralized(spec, hp, d, ParamVector(spec.param_count()), 2000, rng);
  EXPECT_EQ(accuracy(spec, w, d.features, d.labels), 1.0);
}

TEST(Blobs, CentralizedSoftmaxReachesHighTrainAccuracy) {
  const Dataset d = generate_blobs(3, 10, 400, 1.0, 42);
  ModelSpec spec;
  spec.kind = ModelKind::softmax;
  spec.input_dim = 10;
  spec.num_classes = 3;
  Hyperparams hp;
  hp.eta = 0.05;
  Rng rng = make_rng(42, 100);
  const std::size_t steps_per_epoch = (d.size() + hp.batch_size - 1) / hp.batch_size;
  const ParamVector w = train_centralized(spec, hp, d, ParamVector(spec.param_count()), 200 * steps_per_epoch, rng);
  EXPECT_GE(accuracy(spec, w, d.features, d.labels), 0.95);
}

TEST(Partition, SingleClientGetsEverything) {
  const Dataset d = generate_blobs(2, 2, 7, 1.0, 3);
  const auto shards = partition_iid(d, 1, 5);
  ASSERT_EQ(shards.size(), 1u);
  std::vector<std::size_t> all(d.size());
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(shards[0].indices, all);
}

TEST(Partition, TenRowsFourClients) {
  const Dataset d = generate_blobs(2, 2, 5, 1.0, 3);
  const auto shards = partition_iid(d, 4, 5);
  std::vector<std::size_t> sizes;
  for (const auto& s : shards) sizes.push_back(s.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 3, 2, 2}));
  for (std::size_t k = 0; k < shards.size(); ++k) EXPECT_EQ(shards[k].owner, std::to_string(k));
}

TEST(Partition, IsAPermutationForRandomSizes) {
  Rng rng(17);
  std::uniform_int_distribution<std::size_t> rows(1, 60), clients(1, 12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t per_class = rows(rng);
    const Dataset d = generate_blobs(2, 1, per_class, 1.0, trial);
    const std::size_t n = std::min(clients(rng), d.size());
    const auto shards = partition_iid(d, n, trial);
    std::vector<std::size_t> seen;
    std::size_t smallest = d.size(), largest = 0;
    for (const auto& s : shards) {
      EXPECT_TRUE(std::is_sorted(s.indices.begin(), s.indices.end()));
      seen.insert(seen.end(), s.indices.begin(), s.indices.end());
      smallest = std::min(smallest, s.size());
      largest = std::max(largest, s.size());
    }
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> expected(d.size());
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(seen, expected);
    EXPECT_LE(largest - smallest, 1u);
  }
}

TEST(Partition, DeterministicInSeedAndRejectsTooManyClients) {
  const Dataset d = generate_blobs(2, 2, 20, 1.0, 3);
  const auto a = partition_iid(d, 3, 8);
  const auto b = partition_iid(d, 3, 8);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(a[k].indices, b[k].indices);
  EXPECT_THROW(partition_iid(d, 41, 8), std::invalid_argument);
  EXPECT_THROW(partition_iid(d, 0, 8), std::invalid_argument);
}

TEST(SampleBatch, SingleRowShardRepeatsThatRow) {
  const Dataset d = generate_blobs(2, 3, 4, 1.0, 3);
  const Shard s{"0", {5}};
  Rng rng(1);
  const Batch b = sample_batch(s, d, 7, rng);
  ASSERT_EQ(b.size(), 7u);
  for (std::size_t r = 0; r < 7; ++r) {
    EXPECT_EQ(b.labels[r], d.labels[5]);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(b.features(r, c), d.features(5, c));
  }
}

TEST(SampleBatch, SameGeneratorStateSameBatch) {
  const Dataset d = generate_blobs(3, 3, 10, 1.0, 3);
  const Shard s = whole_dataset(d);
  Rng a(5), b(5);
  const Batch x = sample_batch(s, d, 16, a);
  const Batch y = sample_batch(s, d, 16, b);
  EXPECT_EQ(x.features, y.features);
  EXPECT_EQ(x.labels, y.labels);
}

TEST(SampleBatch, RowFrequenciesAreUniform) {
  // Five rows with distinct labels so the label identifies the row.
  Dataset d;
  d.features = Matrix(5, 1, {0, 1, 2, 3, 4});
  d.labels = {0, 1, 2, 3, 4};
  d.num_classes = 5;
  const Shard s = whole_dataset(d);
  Rng rng(2024);
  const std::size_t draws = 100000;
  const Batch b = sample_batch(s, d, draws, rng);
  std::vector<double> counts(5, 0.0);
  for (double y : b.labels) counts[static_cast<std::size_t>(y)] += 1.0;
  const double expected = draws / 5.0;
  const double sigma = std::sqrt(draws * 0.2 * 0.8);
  double chi2 = 0.0;
  for (double c : counts) {
    EXPECT_LT(std::abs(c - expected), 3.0 * sigma);
    chi2 += (c - expected) * (c - expected) / expected;
  }
  // 99.9th percentile of chi-square with 4 degrees of freedom.
  EXPECT_LT(chi2, 18.467);
}

TEST(SampleBatch, RejectsEmptyShard) {
  const Dataset d = generate_blobs(2, 2, 2, 1.0, 3);
  Rng rng(1);
  EXPECT_THROW(sample_batch(Shard{"0", {}}, d, 4, rng), std::invalid_argument);
}

TEST(SplitHoldout, ExactSizesAndDisjointRows) {
  const Dataset d = generate_blobs(3, 2, 50, 1.0, 3);
  const auto [train, eval] = split_holdout(d, 30, 9);
  EXPECT_EQ(train.size(), 120u);
  EXPECT_EQ(eval.size(), 30u);
  EXPECT_EQ(train.num_classes, d.num_classes);
  EXPECT_THROW(split_holdout(d, 150, 9), std::invalid_argument);
}

TEST(Csv, HandwrittenTwoRowFile) {
  std::istringstream in("# x0,x1,label\n1.5,-2,0\n3,4.25,1\n");
  const Dataset d = parse_csv(in);
  EXPECT_EQ(d.features, Matrix(2, 2, {1.5, -2.0, 3.0, 4.25}));
  EXPECT_EQ(d.labels, (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(d.num_classes, std::optional<std::size_t>(2));
}

TEST(Csv, RealLabelsMeanRegression) {
  std::istringstream in("1,0.5\n2,1.5\n");
  EXPECT_FALSE(parse_csv(in).num_classes.has_value());
}

TEST(Csv, ErrorsCarryLineNumbers) {
  std::istringstream empty("");
  EXPECT_THROW(parse_csv(empty), ParseError);
  std::istringstream ragged("1,2,0\n1,0\n");
  try {
    parse_csv(ragged);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::istringstream junk("1,abc,0\n");
  EXPECT_THROW(parse_csv(junk), ParseError);
  EXPECT_THROW(load_csv("/nonexistent/file.csv"), ParseError);
}

TEST(Csv, SaveLoadRoundTripIsExact) {
  const Dataset d = generate_blobs(3, 4, 20, 1.3, 11);
  const auto path = fixtures::scratch_dir("csv") / "blobs.csv";
  save_csv(path, d);
  const Dataset back = load_csv(path);
  EXPECT_EQ(back, d);
}

TEST(Subset, SelectsRowsInOrder) {
  const Dataset d = generate_blobs(2, 2, 3, 1.0, 3);
  const std::vector<std::size_t> idx{4, 0};
  const Dataset s = subset(d, idx);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s.labels[0], d.labels[4]);
  EXPECT_EQ(s.features(1, 1), d.features(0, 1));
  const std::vector<std::size_t> bad{6};
  EXPECT_THROW(subset(d, bad), std::out_of_range);
}
