#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>

#include "fedasync/sim.hpp"
#include "fixtures.hpp"

using namespace fedasync;
using namespace fedasync::sim;

namespace {

const std::vector<double> kHmdbSeconds{391.1, 293.1, 121.3, 84.5};

std::vector<std::string> base_overrides(int e_total) {
  return {"hyperparams.e_total=" + std::to_string(e_total), "data.samples_per_class=60", "data.holdout=30",
          "federation.eval_every=1"};
}

SimConfig hmdb_config(int e_total) {
  auto o = base_overrides(e_total);
  o.push_back("federation.n_clients=4");
  o.push_back("federation.profiles=" + fixtures::hmdb_profiles().string());
  return fixtures::sim_from(o);
}

SimConfig uniform_config(std::size_t clients, int e_total) {
  auto o = base_overrides(e_total);
  o.push_back("federation.n_clients=" + std::to_string(clients));
  return fixtures::sim_from(o);
}

// Independent event-queue oracle: each client cycles with a fixed period;
// ties go to the lower index. Returns the time of the e-th completion and the
// per-client completion counts.
std::pair<double, std::vector<int>> oracle_async_total(const std::vector<double>& period, int e) {
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> q;
  for (std::size_t k = 0; k < period.size(); ++k) q.push({period[k], k});
  std::vector<int> counts(period.size(), 0);
  double now = 0.0;
  for (int i = 0; i < e; ++i) {
    const auto [t, k] = q.top();
    q.pop();
    now = t;
    ++counts[k];
    q.push({t + period[k], k});
  }
  return {now, counts};
}

std::vector<Arrival> arrivals_of(const ExperimentTrace& trace) {
  std::vector<Arrival> out;
  for (const auto& r : trace.rows) out.push_back({r.client_id, r.tau, r.local_iterations});
  return out;
}

}  // namespace

TEST(Profiles, ParseAndHeterogeneityRatio) {
  const auto profiles = load_device_profiles(fixtures::hmdb_profiles());
  ASSERT_EQ(profiles.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(profiles[k].seconds_per_local_epoch, kHmdbSeconds[k]);
  const double ratio = heterogeneity_ratio(profiles);
  EXPECT_NEAR(ratio, 391.1 / 84.5, 1e-15);
  EXPECT_GE(ratio, 4.6);
  EXPECT_LE(ratio, 4.7);
}

TEST(Profiles, MalformedFilesAreRejected) {
  std::istringstream bad_header("device,secs\nnano,1\n");
  EXPECT_THROW(parse_device_profiles(bad_header), ParseError);
  std::istringstream short_row("name,seconds_per_local_epoch,uplink_s,downlink_s\nnano,1,0\n");
  EXPECT_THROW(parse_device_profiles(short_row), ParseError);
  std::istringstream empty("name,seconds_per_local_epoch,uplink_s,downlink_s\n");
  EXPECT_THROW(parse_device_profiles(empty), ParseError);
  std::istringstream negative("name,seconds_per_local_epoch,uplink_s,downlink_s\nnano,-1,0,0\n");
  EXPECT_THROW(parse_device_profiles(negative), ParseError);
}

TEST(RoundTime, LinearInIterationsPlusLatencies) {
  const DeviceProfile d{"x", 10.0, 0.5, 0.25};
  EXPECT_DOUBLE_EQ(round_time_s(d, 3, 1.0), 30.75);
  EXPECT_DOUBLE_EQ(round_time_s(d, 6, 2.0), 30.75);
  EXPECT_DOUBLE_EQ(round_time_s(d, 0, 1.0), 0.75);
}

TEST(EventOrder, TimeThenEvaluationThenIndex) {
  const SimEvent early{1.0, SimEvent::Kind::client_finished, 3, 0.0};
  const SimEvent late{2.0, SimEvent::Kind::evaluation_due, 0, 0.0};
  const SimEvent eval{1.0, SimEvent::Kind::evaluation_due, 9, 0.0};
  const SimEvent low{1.0, SimEvent::Kind::client_finished, 1, 0.0};
  EXPECT_TRUE(fires_before(early, late));
  EXPECT_TRUE(fires_before(eval, early));
  EXPECT_TRUE(fires_before(low, early));
  EXPECT_FALSE(fires_before(early, early));
}

TEST(RunAsync, SingleClientAggregatesEveryRound) {
  const SimConfig cfg = uniform_config(1, 5);
  const ExperimentTrace tr = run_async(cfg);
  ASSERT_EQ(tr.rows.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(tr.rows[i].t, i + 1);
    EXPECT_DOUBLE_EQ(tr.rows[i].wall_clock_s, 3.0 * static_cast<double>(i + 1));
    EXPECT_EQ(tr.rows[i].staleness, 0u);
  }
}

TEST(RunAsync, TwoIdenticalClientsAlternate) {
  const ExperimentTrace tr = run_async(uniform_config(2, 8));
  // Hand enumeration: both finish at 3 s; client 0 wins the tie and is
  // re-dispatched on w_1, client 1 then lands with staleness 1 and restarts
  // on w_2. From then on each lands one aggregation behind.
  const std::vector<std::string> ids{"0", "1", "0", "1", "0", "1", "0", "1"};
  const std::vector<Epoch> staleness{0, 1, 1, 1, 1, 1, 1, 1};
  const std::vector<double> clock{3, 3, 6, 6, 9, 9, 12, 12};
  ASSERT_EQ(tr.rows.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(tr.rows[i].client_id, ids[i]) << i;
    EXPECT_EQ(tr.rows[i].staleness, staleness[i]) << i;
    EXPECT_EQ(tr.rows[i].wall_clock_s, clock[i]) << i;
  }
}

TEST(RunAsync, JetsonProfilesTotalMatchesEventQueueOracle) {
  const ExperimentTrace tr = run_async(hmdb_config(80));
  std::vector<double> period;
  for (double s : kHmdbSeconds) period.push_back(3.0 * s);
  const auto [total, counts] = oracle_async_total(period, 80);
  EXPECT_NEAR(tr.summary.total_wall_clock_s, total, 1e-9);
  ASSERT_EQ(tr.rows.size(), 80u);
  std::vector<int> seen(4, 0);
  for (const auto& r : tr.rows) ++seen[std::stoul(r.client_id)];
  EXPECT_EQ(seen, counts);
  EXPECT_GT(seen[3], seen[2]);
  EXPECT_GT(seen[2], seen[1]);
  EXPECT_GT(seen[1], seen[0]);
}

TEST(RunSync, JetsonProfilesTotalIsSlowestDeviceEveryRound) {
  const ExperimentTrace tr = run_sync(hmdb_config(80));
  EXPECT_NEAR(tr.summary.total_wall_clock_s, 80 * 3 * 391.1, 1e-9);
  ASSERT_EQ(tr.rows.size(), 80u);
  for (const auto& r : tr.rows) {
    EXPECT_EQ(r.staleness, 0u);
    EXPECT_FALSE(r.beta_t.has_value());
  }
}

TEST(RunSync, SlowestOfTwoDominates) {
  auto o = base_overrides(1);
  const auto dir = fixtures::scratch_dir("two_profiles");
  {
    std::ofstream f(dir / "p.csv");
    f << "name,seconds_per_local_epoch,uplink_s,downlink_s\nnano,391.1,0,0\nagx,84.5,0,0\n";
  }
  o.push_back("federation.n_clients=2");
  o.push_back("federation.profiles=" + (dir / "p.csv").string());
  const ExperimentTrace tr = run_sync(fixtures::sim_from(o));
  EXPECT_DOUBLE_EQ(tr.summary.total_wall_clock_s, 3 * 391.1);
}

TEST(CompareWallclock, ReductionPinnedAgainstOracle) {
  const SimConfig cfg = hmdb_config(80);
  const double reduction = compare_wallclock(run_async(cfg), run_sync(cfg));
  std::vector<double> period;
  for (double s : kHmdbSeconds) period.push_back(3.0 * s);
  const double oracle = 1.0 - oracle_async_total(period, 80).first / (80 * 3 * 391.1);
  EXPECT_NEAR(reduction, oracle, 1e-9);
  EXPECT_NEAR(reduction, 0.9, 1e-9);
  EXPECT_GE(reduction, 0.3);
}

TEST(CompareWallclock, IdenticalSingleClientIsZero) {
  const SimConfig cfg = uniform_config(1, 4);
  EXPECT_EQ(compare_wallclock(run_async(cfg), run_sync(cfg)), 0.0);
}

TEST(CompareWallclock, PublishedTotalsGiveFortyPercent) {
  ExperimentTrace async_trace, sync_trace;
  async_trace.rows.resize(1);
  sync_trace.rows.resize(1);
  async_trace.summary.total_wall_clock_s = 6 * 3600 + 31 * 60;
  sync_trace.summary.total_wall_clock_s = 10 * 3600 + 54 * 60;
  EXPECT_NEAR(compare_wallclock(async_trace, sync_trace), 0.402, 5e-4);
  EXPECT_THROW(compare_wallclock(ExperimentTrace{}, sync_trace), std::invalid_argument);
}

TEST(RunAsync, SingleClientFullReplacementEqualsCentralizedSgd) {
  auto o = base_overrides(20);
  o.push_back("federation.n_clients=1");
  o.push_back("hyperparams.beta=1.0");
  o.push_back("hyperparams.theta=0.0");
  o.push_back("hyperparams.eta=0.05");
  const SimConfig cfg = fixtures::sim_from(o);
  const ExperimentTrace a = run_async(cfg);
  const ExperimentTrace c = run_centralized(cfg);
  EXPECT_TRUE(bit_equal(a.final_weights, c.final_weights));
  ASSERT_EQ(a.rows.size(), c.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].global_loss, c.rows[i].global_loss);
}

TEST(RunSync, SingleClientMatchesAsyncReplacement) {
  auto o = base_overrides(10);
  o.push_back("federation.n_clients=1");
  o.push_back("hyperparams.beta=1.0");
  const SimConfig cfg = fixtures::sim_from(o);
  const ExperimentTrace a = run_async(cfg);
  const ExperimentTrace s = run_sync(cfg);
  ASSERT_EQ(a.rows.size(), s.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].global_loss, s.rows[i].global_loss);
}

TEST(RunAsync, HomogeneousStalenessBoundedByConcurrency) {
  for (std::size_t c : {2u, 4u, 8u}) {
    const ExperimentTrace tr = run_async(uniform_config(c, 60));
    EXPECT_LE(tr.summary.max_staleness, c - 1) << c;
    EXPECT_EQ(tr.summary.max_staleness, c - 1) << c;
  }
}

TEST(RunAsync, HeterogeneousStalenessCanExceedConcurrency) {
  // The nano finishes once while the AGX lands many times; the bound C-1
  // only holds when every device takes equally long.
  const ExperimentTrace tr = run_async(hmdb_config(80));
  EXPECT_GT(tr.summary.max_staleness, 3u);
  EXPECT_GT(tr.summary.k_bound_violations, 0u);
}

TEST(RunAsync, ExactlyEAggregationsGapFreeAndMonotoneClock) {
  const ExperimentTrace tr = run_async(hmdb_config(37));
  ASSERT_EQ(tr.rows.size(), 37u);
  EXPECT_EQ(tr.summary.aggregations, 37u);
  double prev = 0.0;
  for (std::size_t i = 0; i < tr.rows.size(); ++i) {
    EXPECT_EQ(tr.rows[i].t, i + 1);
    EXPECT_GE(tr.rows[i].wall_clock_s, prev);
    EXPECT_LE(tr.rows[i].tau, tr.rows[i].t - 1);
    prev = tr.rows[i].wall_clock_s;
  }
}

TEST(RunAsync, DeterministicForEqualSeeds) {
  const SimConfig cfg = hmdb_config(30);
  const ExperimentTrace a = run_async(cfg);
  const ExperimentTrace b = run_async(cfg);
  EXPECT_TRUE(bit_equal(a.final_weights, b.final_weights));
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].global_loss, b.rows[i].global_loss);
    EXPECT_EQ(a.rows[i].client_id, b.rows[i].client_id);
  }
}

TEST(ReplayAsync, RecordedArrivalOrderReproducesTheRun) {
  const SimConfig cfg = hmdb_config(40);
  const ExperimentTrace a = run_async(cfg);
  const auto arrivals = arrivals_of(a);
  const ExperimentTrace r = replay_async(cfg, arrivals);
  EXPECT_TRUE(bit_equal(a.final_weights, r.final_weights));
  ASSERT_EQ(r.rows.size(), a.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(r.rows[i].staleness, a.rows[i].staleness);
}

TEST(ReplayAsync, RejectsArrivalsFromTheFutureOrUnknownClients) {
  const SimConfig cfg = uniform_config(2, 3);
  const std::vector<Arrival> future{{"0", 1, 3}};
  EXPECT_THROW(replay_async(cfg, future), ProtocolError);
  const std::vector<Arrival> unknown{{"5", 0, 3}};
  EXPECT_THROW(replay_async(cfg, unknown), std::exception);
}

TEST(RunAsync, EvaluationScheduleFollowsEvalEvery) {
  auto o = base_overrides(10);
  o.push_back("federation.eval_every=4");
  const ExperimentTrace tr = run_async(fixtures::sim_from(o));
  for (const auto& r : tr.rows) {
    const bool due = r.t % 4 == 0 || r.t == 10;
    EXPECT_EQ(r.global_loss.has_value(), due) << r.t;
    EXPECT_EQ(r.accuracy.has_value(), due) << r.t;
  }
}

TEST(RunAsync, DivergenceIsReportedNotThrown) {
  auto o = base_overrides(10);
  o.push_back("hyperparams.eta=1e300");
  const ExperimentTrace tr = run_async(fixtures::sim_from(o));
  EXPECT_TRUE(tr.summary.diverged);
  EXPECT_FALSE(tr.summary.divergence_detail.empty());
}

TEST(RunAsync, LossDecreasesOnBlobs) {
  auto o = base_overrides(80);
  o.push_back("hyperparams.eta=0.05");
  const ExperimentTrace tr = run_async(fixtures::sim_from(o));
  EXPECT_LT(tr.summary.final_loss, tr.summary.initial_loss);
}

TEST(SimConfig, ValidateRejectsMismatchedDevices) {
  SimConfig cfg = uniform_config(2, 3);
  cfg.devices.pop_back();
  EXPECT_THROW(run_async(cfg), std::invalid_argument);
}
