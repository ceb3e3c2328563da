#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <thread>

#include "fedasync/log.hpp"
#include "fedasync/server.hpp"
#include "fixtures.hpp"

using namespace fedasync;

namespace {

Hyperparams default_hp() {
  Hyperparams hp;
  hp.beta = 0.7;
  hp.a = 0.5;
  return hp;
}

ClientUpdate update(std::vector<double> w, Epoch tau, ClientId id = "0") {
  return ClientUpdate{ParamVector(std::move(w)), tau, std::move(id), 3};
}

}  // namespace

TEST(AsyncAggregate, FreshUpdateMixesWithBeta) {
  const GlobalState s = GlobalState::initial(ParamVector{1.0, -2.0});
  const auto [next, rec] = async_aggregate(s, update({3.0, 4.0}, 0), default_hp());
  EXPECT_NEAR(next.w[0], 0.3 * 1.0 + 0.7 * 3.0, 1e-15);
  EXPECT_NEAR(next.w[1], 0.3 * -2.0 + 0.7 * 4.0, 1e-15);
  EXPECT_EQ(next.t, 1u);
  EXPECT_EQ(rec.staleness, 0u);
  EXPECT_EQ(rec.beta_t, 0.7);
  EXPECT_EQ(rec.t_after, 1u);
}

TEST(AsyncAggregate, FullReplacementMode) {
  Hyperparams hp;
  hp.beta = 1.0;
  hp.a = 0.0;
  GlobalState s = GlobalState::initial(ParamVector{5.0, 5.0});
  s.t = 9;
  const auto [next, rec] = async_aggregate(s, update({-1.25, 0.5}, 2), hp);
  EXPECT_TRUE(bit_equal(next.w, ParamVector{-1.25, 0.5}));
  EXPECT_EQ(rec.staleness, 7u);
}

// Two clients, dimension 2, staleness pattern {0,1,0,3,2}, unrolled by hand.
TEST(AsyncAggregate, MatchesHandUnrolledRecurrence) {
  const Hyperparams hp = default_hp();
  const std::vector<std::vector<double>> w_new{{1.0, -1.0}, {0.5, 2.0}, {-0.75, 0.25}, {2.0, 2.0}, {0.0, -3.0}};
  const std::vector<Epoch> taus{0, 0, 2, 0, 2};
  const std::vector<ClientId> ids{"0", "1", "0", "1", "0"};

  GlobalState s = GlobalState::initial(ParamVector{0.2, 0.4});
  std::vector<ParamVector> states;
  std::vector<Epoch> staleness;
  for (std::size_t k = 0; k < 5; ++k) {
    auto [next, rec] = async_aggregate(s, ClientUpdate{ParamVector(w_new[k]), taus[k], ids[k], 3}, hp);
    staleness.push_back(rec.staleness);
    s = std::move(next);
    states.push_back(s.w);
  }
  EXPECT_EQ(staleness, (std::vector<Epoch>{0, 1, 0, 3, 2}));

  // beta_t = 0.7 (1 + s)^-0.5 for s = 0, 1, 0, 3, 2.
  const double b1 = 0.7, b2 = 0.7 / std::sqrt(2.0), b3 = 0.7, b4 = 0.35, b5 = 0.7 / std::sqrt(3.0);
  const double x1 = (1 - b1) * 0.2 + b1 * 1.0, y1 = (1 - b1) * 0.4 + b1 * -1.0;
  const double x2 = (1 - b2) * x1 + b2 * 0.5, y2 = (1 - b2) * y1 + b2 * 2.0;
  const double x3 = (1 - b3) * x2 + b3 * -0.75, y3 = (1 - b3) * y2 + b3 * 0.25;
  const double x4 = (1 - b4) * x3 + b4 * 2.0, y4 = (1 - b4) * y3 + b4 * 2.0;
  const double x5 = (1 - b5) * x4 + b5 * 0.0, y5 = (1 - b5) * y4 + b5 * -3.0;
  const double xs[] = {x1, x2, x3, x4, x5};
  const double ys[] = {y1, y2, y3, y4, y5};
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_NEAR(states[k][0], xs[k], 1e-12) << k;
    EXPECT_NEAR(states[k][1], ys[k], 1e-12) << k;
  }
  EXPECT_EQ(s.t, 5u);
  EXPECT_EQ(s.aggregations, 5u);
  EXPECT_EQ(s.max_staleness_seen, 3u);
}

TEST(AsyncAggregate, KBoundIsObservationalOnly) {
  Hyperparams hp = default_hp();
  hp.k_bound = 1;
  GlobalState s = GlobalState::initial(ParamVector{0.0});
  s.t = 4;
  const auto [next, rec] = async_aggregate(s, update({1.0}, 0), hp);
  EXPECT_TRUE(rec.exceeded_k_bound);
  EXPECT_EQ(next.t, 5u);
  EXPECT_GT(next.w[0], 0.0);
}

TEST(AsyncAggregate, RejectsFutureStampAndDimensionMismatch) {
  const GlobalState s = GlobalState::initial(ParamVector{0.0, 0.0});
  EXPECT_THROW(async_aggregate(s, update({1.0, 1.0}, 1), default_hp()), ProtocolError);
  EXPECT_THROW(async_aggregate(s, update({1.0}, 0), default_hp()), DimensionError);
}

TEST(SyncRound, IdenticalModelsAreAFixedPoint) {
  const GlobalState s = GlobalState::initial(ParamVector{0.0, 0.0});
  const std::vector<ClientUpdate> ups{update({1.5, -0.5}, 0, "0"), update({1.5, -0.5}, 0, "1"),
                                      update({1.5, -0.5}, 0, "2")};
  const GlobalState next = sync_round(s, ups, {{"0", 1}, {"1", 2}, {"2", 3}});
  EXPECT_DOUBLE_EQ(next.w[0], 1.5);
  EXPECT_DOUBLE_EQ(next.w[1], -0.5);
  EXPECT_EQ(next.t, 1u);
}

TEST(SyncRound, EqualShardsAverage) {
  const GlobalState s = GlobalState::initial(ParamVector{9.0});
  const std::vector<ClientUpdate> ups{update({0.0}, 0, "0"), update({2.0}, 0, "1")};
  EXPECT_EQ(sync_round(s, ups, {{"0", 5}, {"1", 5}}).w[0], 1.0);
}

TEST(SyncRound, WeightsByShardSize) {
  const GlobalState s = GlobalState::initial(ParamVector{0.0, 0.0});
  const std::vector<ClientUpdate> ups{update({1.0, 4.0}, 0, "a"), update({-2.0, 0.5}, 0, "b"),
                                      update({3.0, -1.0}, 0, "c")};
  const GlobalState next = sync_round(s, ups, {{"a", 1}, {"b", 2}, {"c", 3}});
  EXPECT_NEAR(next.w[0], (1.0 * 1.0 + 2.0 * -2.0 + 3.0 * 3.0) / 6.0, 1e-12);
  EXPECT_NEAR(next.w[1], (1.0 * 4.0 + 2.0 * 0.5 + 3.0 * -1.0) / 6.0, 1e-12);
}

TEST(SyncRound, RejectsMissingDuplicateForeignAndStaleUpdates) {
  const GlobalState s = GlobalState::initial(ParamVector{0.0});
  const std::map<ClientId, std::size_t> sizes{{"0", 1}, {"1", 1}};
  const std::vector<ClientUpdate> missing{update({1.0}, 0, "0")};
  EXPECT_THROW(sync_round(s, missing, sizes), std::invalid_argument);
  const std::vector<ClientUpdate> dup{update({1.0}, 0, "0"), update({1.0}, 0, "0"), update({1.0}, 0, "1")};
  EXPECT_THROW(sync_round(s, dup, sizes), std::invalid_argument);
  const std::vector<ClientUpdate> foreign{update({1.0}, 0, "0"), update({1.0}, 0, "7")};
  EXPECT_THROW(sync_round(s, foreign, sizes), std::invalid_argument);
  GlobalState later = s;
  later.t = 2;
  const std::vector<ClientUpdate> stale{update({1.0}, 1, "0"), update({1.0}, 2, "1")};
  EXPECT_THROW(sync_round(later, stale, sizes), ProtocolError);
}

TEST(HPolicy, FixedAlwaysReturnsItsValue) {
  Hyperparams hp;
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(assign_local_iterations(hpolicy::Fixed{3}, "0", hp, rng), 3);
  EXPECT_EQ(hp.lambda(), 1.0);
  EXPECT_THROW(assign_local_iterations(hpolicy::Fixed{4}, "0", hp, rng), ConfigError);
}

TEST(HPolicy, UniformCoversTheWholeRange) {
  Hyperparams hp;
  hp.h_min = 2;
  hp.h_max = 9;
  Rng rng(2);
  std::map<int, int> counts;
  for (int i = 0; i < 10000; ++i) {
    const int h = assign_local_iterations(hpolicy::Uniform{}, "0", hp, rng);
    ASSERT_GE(h, 2);
    ASSERT_LE(h, 9);
    ++counts[h];
  }
  ASSERT_EQ(counts.size(), 8u);
  for (const auto& [h, n] : counts) EXPECT_GT(n, 10000 / 8 / 2) << h;
}

TEST(HPolicy, PerDeviceTableWithFallback) {
  Hyperparams hp;
  hp.h_min = 1;
  hp.h_max = 5;
  Rng rng(3);
  const hpolicy::PerDevice table{{{"0", 5}, {"1", 2}}};
  EXPECT_EQ(assign_local_iterations(table, "0", hp, rng), 5);
  EXPECT_EQ(assign_local_iterations(table, "1", hp, rng), 2);
  EXPECT_EQ(assign_local_iterations(table, "2", hp, rng), 1);
  const hpolicy::PerDevice bad{{{"0", 6}}};
  EXPECT_THROW(assign_local_iterations(bad, "0", hp, rng), ConfigError);
}

TEST(Evaluator, LossOnTrainAccuracyOnEval) {
  auto train = fixtures::rows_dataset({{1.0, 0.0}, {-1.0, 1.0}}, 2);
  auto eval = fixtures::rows_dataset({{2.0, 1.0}, {-2.0, 1.0}, {3.0, 0.0}}, 2);
  ModelSpec spec;
  spec.kind = ModelKind::logistic_regression;
  spec.input_dim = 1;
  spec.l2_coeff = 0.0;
  const Evaluator ev(spec, train, eval);
  const ParamVector w{-1.0, 0.0};
  const Metrics m = ev.evaluate(w);
  Batch tb{train->features, train->labels};
  EXPECT_DOUBLE_EQ(m.loss, loss(spec, w, tb));
  EXPECT_DOUBLE_EQ(m.grad_norm_sq, squared_norm(grad(spec, w, tb).values()));
  ASSERT_TRUE(m.accuracy.has_value());
  EXPECT_DOUBLE_EQ(*m.accuracy, 2.0 / 3.0);
}

TEST(AsyncServer, SerializesConcurrentSubmissions) {
  Hyperparams hp = default_hp();
  hp.k_bound = 1000;
  AsyncServer server(ParamVector{0.0, 0.0}, hp);
  constexpr int kThreads = 8;
  constexpr int kPerThread = 50;
  std::vector<std::thread> workers;
  for (int k = 0; k < kThreads; ++k) {
    workers.emplace_back([&server, k] {
      for (int i = 0; i < kPerThread; ++i) {
        const GlobalState snap = server.snapshot();
        server.submit(ClientUpdate{ParamVector{1.0, -1.0}, snap.t, std::to_string(k), 1});
      }
    });
  }
  for (auto& w : workers) w.join();
  const GlobalState end = server.snapshot();
  EXPECT_EQ(end.t, static_cast<Epoch>(kThreads * kPerThread));
  const auto history = server.history();
  ASSERT_EQ(history.size(), static_cast<std::size_t>(kThreads * kPerThread));
  for (std::size_t i = 0; i < history.size(); ++i) {
    EXPECT_EQ(history[i].t_after, i + 1);
    EXPECT_LE(history[i].staleness, static_cast<Epoch>(kThreads - 1));
  }
  EXPECT_GE(end.w[0], 0.0);
  EXPECT_LE(end.w[0], 1.0);
}

TEST(AsyncServer, WarnsWhenStalenessExceedsBound) {
  std::vector<std::string> warnings;
  set_log_sink([&](LogLevel level, std::string_view msg) {
    if (level == LogLevel::warning) warnings.emplace_back(msg);
  });
  Hyperparams hp = default_hp();
  hp.k_bound = 0;
  AsyncServer server(ParamVector{0.0}, hp);
  server.submit(ClientUpdate{ParamVector{1.0}, 0, "0", 1});
  const auto [rec, state] = server.submit(ClientUpdate{ParamVector{1.0}, 0, "1", 1});
  set_log_sink({});
  EXPECT_TRUE(rec.exceeded_k_bound);
  EXPECT_EQ(state.t, 2u);
  EXPECT_FALSE(warnings.empty());
}
