#include <benchmark/benchmark.h>

#include <memory>

#include "fedasync/client.hpp"
#include "fedasync/config.hpp"
#include "fedasync/experiment.hpp"
#include "fedasync/log.hpp"
#include "fedasync/netproto.hpp"
#include "fedasync/sim.hpp"

using namespace fedasync;

namespace {

ParamVector filled(std::size_t n, double v) { return ParamVector(std::vector<double>(n, v)); }

ModelSpec two_layer(std::size_t in, std::size_t hidden, std::size_t classes) {
  ModelSpec s;
  s.kind = ModelKind::two_layer;
  s.input_dim = in;
  s.hidden_dim = hidden;
  s.num_classes = classes;
  return s;
}

void BM_Mix(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const ParamVector a = filled(n, 1.0), b = filled(n, 2.0);
  for (auto _ : state) benchmark::DoNotOptimize(mix(a, b, 0.3));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Mix)->Range(64, 1 << 16);

void BM_Gradient(benchmark::State& state) {
  const ModelSpec spec = two_layer(10, 32, 3);
  const data::Dataset ds = data::generate_blobs(3, 10, 64, 1.0, 1);
  Rng rng(2);
  const ParamVector w = init_weights(spec, rng);
  Batch batch{ds.features, ds.labels};
  for (auto _ : state) benchmark::DoNotOptimize(grad(spec, w, batch));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(ds.size()));
}
BENCHMARK(BM_Gradient);

void BM_LocalTrain(benchmark::State& state) {
  auto ds = std::make_shared<data::Dataset>(data::generate_blobs(3, 10, 100, 1.0, 1));
  ModelSpec spec;
  spec.input_dim = 10;
  spec.num_classes = 3;
  Hyperparams hp;
  hp.h_min = 1;
  hp.h_max = 64;
  const auto shards = data::partition_iid(*ds, 1, 1);
  Client client(ClientConfig{"0", ds, shards[0], spec, hp, Rng(3)});
  const ParamVector w(spec.param_count());
  const auto h = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(client.local_train(w, 0, h));
}
BENCHMARK(BM_LocalTrain)->Arg(1)->Arg(8)->Arg(64);

void BM_FrameRoundTrip(benchmark::State& state) {
  const ParamVector w = filled(static_cast<std::size_t>(state.range(0)), 0.125);
  for (auto _ : state) {
    auto frame = net::encode_frame(net::ModelUp{7, "3", w});
    benchmark::DoNotOptimize(net::decode_frame(frame));
  }
  state.SetBytesProcessed(state.iterations() * state.range(0) * 8);
}
BENCHMARK(BM_FrameRoundTrip)->Range(8, 1 << 14);

void BM_SimulateAsync(benchmark::State& state) {
  set_log_sink([](LogLevel, std::string_view) {});
  const sim::SimConfig cfg =
      experiment::build_sim_config(config::config_from_overrides({"hyperparams.e_total=80"}));
  for (auto _ : state) benchmark::DoNotOptimize(sim::run_async(cfg));
}
BENCHMARK(BM_SimulateAsync)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
