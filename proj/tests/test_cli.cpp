#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "fedasync/config.hpp"
#include "fedasync/experiment.hpp"
#include "fixtures.hpp"

using namespace fedasync;
using namespace fedasync::config;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

std::size_t line_of(const std::string& toml) {
  try {
    parse_toml(toml);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

std::string key_of(const std::vector<std::string>& overrides) {
  try {
    config_from_overrides(overrides);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

// Small, fast experiment writing into `dir`.
std::vector<std::string> quick(const std::string& mode, const fs::path& dir) {
  return {"mode=" + mode, "output.dir=" + dir.string(), "data.samples_per_class=40", "data.holdout=30",
          "hyperparams.e_total=12", "hyperparams.eta=0.05", "output.plots=false"};
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const std::string& value) : name_(name) { ::setenv(name, value.c_str(), 1); }
  ~ScopedEnv() { ::unsetenv(name_); }

 private:
  const char* name_;
};

}  // namespace

TEST(Toml, ScalarsArraysSectionsAndComments) {
  const Table t = parse_toml(R"(
mode = "sweep"   # trailing comment
[model]
kind = 'softmax-classifier'
hidden_dim = 1_024
[hyperparams]
eta = 5e-2
beta = 0.7
[output]
plots = false
[sweep]
a = [0.0, 0.3, 1]
)");
  EXPECT_EQ(std::get<std::string>(t.at("mode")), "sweep");
  EXPECT_EQ(std::get<std::string>(t.at("model.kind")), "softmax-classifier");
  EXPECT_EQ(std::get<std::int64_t>(t.at("model.hidden_dim")), 1024);
  EXPECT_EQ(std::get<double>(t.at("hyperparams.eta")), 0.05);
  EXPECT_EQ(std::get<bool>(t.at("output.plots")), false);
  const auto& arr = std::get<std::vector<Scalar>>(t.at("sweep.a"));
  ASSERT_EQ(arr.size(), 3u);
  EXPECT_EQ(std::get<std::int64_t>(arr[2]), 1);
}

TEST(Toml, ErrorsReportTheLine) {
  EXPECT_EQ(line_of("a = 1\nb = \n"), 2u);
  EXPECT_EQ(line_of("[x]\na = 1\na = 2\n"), 3u);
  EXPECT_EQ(line_of("a = \"open\n"), 1u);
  EXPECT_EQ(line_of("[broken\n"), 1u);
  EXPECT_EQ(line_of("a = [1, 2\n"), 1u);
  EXPECT_EQ(line_of("just words\n"), 1u);
  EXPECT_EQ(line_of("a = 1 b\n"), 1u);
}

TEST(Config, FineTuneDefaults) {
  const ExperimentConfig c = config_from_overrides({});
  EXPECT_EQ(c.mode, Mode::simulate_async);
  EXPECT_EQ(c.hp.eta, 0.001);
  EXPECT_EQ(c.hp.batch_size, 8);
  EXPECT_EQ(c.hp.beta, 0.7);
  EXPECT_EQ(c.hp.a, 0.5);
  EXPECT_EQ(c.hp.e_total, 80);
  EXPECT_EQ(c.federation.h, 3);
  EXPECT_EQ(c.distill.eta, 0.1);
  EXPECT_EQ(c.distill.batch_size, 128);
  EXPECT_EQ(c.distill.weight_decay, 0.001);
  EXPECT_EQ(c.distill.momentum, 0.9);
  EXPECT_EQ(c.model.l2_coeff, 0.001);
}

TEST(Config, UnknownKeysTypesAndRangesNameTheKey) {
  EXPECT_EQ(key_of({"hyperparams.etta=0.1"}), "hyperparams.etta");
  EXPECT_EQ(key_of({"hyperparams.eta=\"fast\""}), "hyperparams.eta");
  EXPECT_EQ(key_of({"hyperparams.beta=0"}), "hyperparams.beta");
  EXPECT_EQ(key_of({"federation.h=9"}), "federation.h");
  EXPECT_EQ(key_of({"federation.profiles=/no/such/file.csv"}), "federation.profiles");
  EXPECT_EQ(key_of({"data.source=\"parquet\""}), "data.source");
  EXPECT_EQ(key_of({"no_equals_sign"}), "no_equals_sign");
  EXPECT_THROW(config_from_overrides({"mode=teleport"}), std::exception);
}

TEST(Config, RepositoryConfigsLoad) {
  for (const char* name : {"jetson_hmdb51.toml", "jetson_ucf101.toml", "blobs_parity.toml", "distill_blobs.toml",
                           "sweep_hmdb51.toml", "probe_softmax.toml"}) {
    EXPECT_NO_THROW(load_config(fixtures::source_path("configs") / name)) << name;
  }
  const ExperimentConfig c = load_config(fixtures::source_path("configs/jetson_hmdb51.toml"));
  EXPECT_EQ(c.federation.n_clients, 4u);
  EXPECT_EQ(c.hp.e_total, 80);
  EXPECT_EQ(c.hp.theta, 0.1);
}

TEST(WeightsFile, EmptyVectorIsSixteenBytes) {
  std::ostringstream out;
  experiment::write_weights(out, ParamVector(std::vector<double>{}));
  EXPECT_EQ(out.str().size(), 16u);
  EXPECT_EQ(out.str().substr(0, 8), "FEDW0001");
}

TEST(WeightsFile, OneHasExactBytes) {
  std::ostringstream out;
  experiment::write_weights(out, ParamVector{1.0});
  const std::string expected = std::string("FEDW0001") + std::string("\x01\0\0\0\0\0\0\0", 8) +
                               std::string("\0\0\0\0\0\0\xF0\x3F", 8);
  EXPECT_EQ(out.str(), expected);
}

TEST(WeightsFile, RandomVectorsRoundTrip) {
  Rng rng(3);
  std::normal_distribution<double> normal(0.0, 100.0);
  const fs::path dir = fixtures::scratch_dir("weights");
  for (int i = 0; i < 50; ++i) {
    std::vector<double> v(static_cast<std::size_t>(i));
    for (double& x : v) x = normal(rng);
    const ParamVector w(v);
    experiment::save_weights(dir / "w.bin", w);
    EXPECT_TRUE(bit_equal(experiment::load_weights(dir / "w.bin"), w));
  }
}

TEST(WeightsFile, RejectsCorruptFiles) {
  std::ostringstream good;
  experiment::write_weights(good, ParamVector{1.0, 2.0});
  std::string bad_magic = good.str();
  bad_magic[3] = 'X';
  std::istringstream a(bad_magic);
  EXPECT_THROW(experiment::read_weights(a), ParseError);
  std::istringstream b(good.str().substr(0, good.str().size() - 3));
  EXPECT_THROW(experiment::read_weights(b), ParseError);
  std::istringstream c(good.str());
  EXPECT_THROW(experiment::read_weights(c, 3), DimensionError);
}

TEST(TraceCsv, FixedColumnsAndRoundTripDigits) {
  sim::ExperimentTrace tr;
  sim::TraceRow r;
  r.t = 1;
  r.wall_clock_s = 0.1;
  r.global_loss = 1.0 / 3.0;
  r.grad_norm_sq = 2.0;
  r.staleness = 2;
  r.beta_t = 0.35;
  r.client_id = "3";
  tr.rows.push_back(r);
  std::ostringstream out;
  experiment::write_trace_csv(out, tr);
  EXPECT_EQ(out.str(),
            "t,wall_clock_s,global_loss,grad_norm_sq,accuracy,staleness,beta_t,client_id\n"
            "1,0.10000000000000001,0.33333333333333331,2,,2,0.34999999999999998,3\n");
}

TEST(Run, SimulateAsyncWritesArtifactsAndIsDeterministic) {
  const fs::path a = fixtures::scratch_dir("run_a");
  const fs::path b = fixtures::scratch_dir("run_b");
  std::ostringstream log;
  auto oa = quick("simulate-async", a);
  oa.push_back("output.plots=true");
  auto ob = quick("simulate-async", b);
  ASSERT_EQ(experiment::run(config_from_overrides(oa), log), 0);
  ASSERT_EQ(experiment::run(config_from_overrides(ob), log), 0);
  for (const char* f : {"trace.csv", "summary.txt", "final_weights.bin", "loss.svg", "accuracy.svg"}) {
    EXPECT_TRUE(fs::exists(a / f)) << f;
  }
  const std::string trace = read_file(a / "trace.csv");
  EXPECT_EQ(line_count(trace), 13u);
  EXPECT_EQ(trace, read_file(b / "trace.csv"));
  EXPECT_EQ(read_file(a / "loss.svg").rfind("<svg", 0), 0u);
}

TEST(Run, OutputDirectoryOverriddenByEnvironment) {
  const fs::path configured = fixtures::scratch_dir("env_configured");
  const fs::path redirected = fixtures::scratch_dir("env_redirected");
  ScopedEnv env("FEDASYNC_OUT", redirected.string());
  std::ostringstream log;
  ASSERT_EQ(experiment::run(config_from_overrides(quick("simulate-sync", configured)), log), 0);
  EXPECT_TRUE(fs::exists(redirected / "trace.csv"));
  EXPECT_FALSE(fs::exists(configured / "trace.csv"));
}

TEST(Run, GradcheckPassesWithExitZero) {
  const fs::path dir = fixtures::scratch_dir("gradcheck");
  std::ostringstream log;
  auto o = quick("gradcheck", dir);
  o.push_back("gradcheck.draws=100");
  EXPECT_EQ(experiment::run(config_from_overrides(o), log), 0);
  EXPECT_EQ(line_count(read_file(dir / "gradcheck.csv")), 5u);
}

TEST(Run, SweepProducesGridAndComparison) {
  const fs::path dir = fixtures::scratch_dir("sweep");
  std::ostringstream log;
  ASSERT_EQ(experiment::run(config_from_overrides(quick("sweep", dir)), log), 0);
  int cells = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && e.path().filename().string().rfind("a", 0) == 0) {
      EXPECT_TRUE(fs::exists(e.path() / "trace.csv"));
      ++cells;
    }
  }
  EXPECT_EQ(cells, 16);
  EXPECT_TRUE(fs::exists(dir / "a0.5_beta0.7" / "trace.csv"));
  EXPECT_TRUE(fs::exists(dir / "sync" / "trace.csv"));
  EXPECT_EQ(line_count(read_file(dir / "comparison.csv")), 18u);
}

TEST(Run, DistillWritesStageTrace) {
  const fs::path dir = fixtures::scratch_dir("distill");
  std::ostringstream log;
  auto o = quick("distill", dir);
  o.push_back("distill.ta_hidden=[16]");
  o.push_back("distill.epochs_per_stage=1");
  ASSERT_EQ(experiment::run(config_from_overrides(o), log), 0);
  const std::string trace = read_file(dir / "trace.csv");
  EXPECT_EQ(trace.rfind("stage,name,role,kind,hidden_dim,param_count,eval_accuracy,cost_madds,cumulative_cost_madds",
                        0),
            0u);
  EXPECT_EQ(line_count(trace), 4u);
  EXPECT_TRUE(fs::exists(dir / "final_weights.bin"));
}

TEST(Run, ConfigErrorsExitTwoAndDivergenceThree) {
  const fs::path dir = fixtures::scratch_dir("errors");
  std::ostringstream log;
  ExperimentConfig bad = config_from_overrides(quick("simulate-async", dir));
  bad.hp.eta = -1.0;
  EXPECT_EQ(experiment::run(bad, log), 2);
  auto o = quick("simulate-async", dir);
  o.push_back("hyperparams.eta=1e300");
  EXPECT_EQ(experiment::run(config_from_overrides(o), log), 3);
}

TEST(Run, FineTuneFromDistilledWeights) {
  const fs::path d = fixtures::scratch_dir("ft_distill");
  std::ostringstream log;
  auto o = quick("distill", d);
  o.push_back("distill.epochs_per_stage=1");
  o.push_back("distill.student_hidden=4");
  ASSERT_EQ(experiment::run(config_from_overrides(o), log), 0);

  const fs::path f = fixtures::scratch_dir("ft_sim");
  auto s = quick("simulate-async", f);
  s.push_back("model.kind=\"two-layer\"");
  s.push_back("model.hidden_dim=4");
  s.push_back("model.fine_tune_last_layer=true");
  s.push_back("federation.initial_weights=" + (d / "final_weights.bin").string());
  ASSERT_EQ(experiment::run(config_from_overrides(s), log), 0);
  const ParamVector before = experiment::load_weights(d / "final_weights.bin");
  const ParamVector after = experiment::load_weights(f / "final_weights.bin");
  ASSERT_EQ(before.dim(), after.dim());
  // Hidden layer: 4 x 10 weights plus 4 biases, all frozen.
  for (std::size_t i = 0; i < 44; ++i) EXPECT_EQ(before[i], after[i]) << i;
}
