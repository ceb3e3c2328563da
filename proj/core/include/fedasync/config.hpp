#pragma once

// Experiment configuration: a flat-sectioned subset of TOML.
//
//   # comment
//   [section]
//   key = 1.5            # integer, float, bool, "string" or [array of scalars]
//
// Keys are addressed as "section.key". Nested tables, inline tables,
// multi-line strings and dates are not supported.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedasync/core.hpp"
#include "fedasync/distill.hpp"
#include "fedasync/models.hpp"
#include "fedasync/server.hpp"

namespace fedasync::config {

using Scalar = std::variant<bool, std::int64_t, double, std::string>;
using Value = std::variant<bool, std::int64_t, double, std::string, std::vector<Scalar>>;
using Table = std::map<std::string, Value>;

/// Throws ParseError with the 1-based line on malformed input or duplicate keys.
Table parse_toml(std::string_view text);
Table load_toml(const std::filesystem::path& path);
/// Parses a single value in TOML syntax; anything unparseable is taken as a
/// bare string so `--set output.dir=runs/x` works without quotes.
Value parse_value_lenient(std::string_view text);

enum class Mode { simulate_async, simulate_sync, simulate_central, serve, client, distill, gradcheck, sweep, probe };
std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view name);

struct DataConfig {
  std::string source = "blobs";  // "blobs" or "csv"
  std::filesystem::path path;    // csv only
  std::size_t num_classes = 3;
  std::size_t dim = 10;
  std::size_t samples_per_class = 500;
  double spread = 1.0;
  std::size_t holdout = 300;
};

struct FederationConfig {
  std::size_t n_clients = 4;
  std::filesystem::path profiles;  // empty: every client takes 1 s per local epoch
  std::string h_policy = "fixed";  // fixed | uniform | per-device
  int h = 3;
  std::vector<int> h_table;        // per-device, by client index
  double iterations_per_local_epoch = 1.0;
  double uplink_s = 0.0;           // added to every profile
  double downlink_s = 0.0;
  int eval_every = 1;
  std::filesystem::path initial_weights;
};

struct NetConfig {
  std::string bind = "127.0.0.1";
  std::string host = "127.0.0.1";
  int port = 7070;
  std::size_t client_index = 0;
  int max_retries = 5;
  int backoff_ms = 50;
};

struct DistillConfig {
  std::size_t teacher_hidden = 64;
  std::vector<std::size_t> ta_hidden;  // largest first, at most 3
  std::size_t student_hidden = 4;      // 0 makes the student a softmax classifier
  double alpha = 0.5;
  int epochs_per_stage = 5;
  distill::TargetMode target_mode = distill::TargetMode::teacher_argmax;
  double eta = 0.1;
  int batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 0.001;
};

struct SweepConfig {
  std::vector<double> a = {0.0, 0.3, 0.5, 0.9};
  std::vector<double> beta = {0.3, 0.5, 0.7, 0.9};
  bool include_sync = true;
};

struct ProbeConfig {
  std::vector<int> e_grid = {20, 80, 320};
  double eta0 = 0.2;
  double tolerance = 1.1;
};

struct ExperimentConfig {
  Mode mode = Mode::simulate_async;
  ModelSpec model;  // input_dim and num_classes come from the data
  bool fine_tune_last_layer = false;
  DataConfig data;
  FederationConfig federation;
  Hyperparams hp;
  std::filesystem::path output_dir = "out";
  bool plots = true;
  NetConfig net;
  DistillConfig distill;
  SweepConfig sweep;
  ProbeConfig probe;
  int gradcheck_draws = 100;

  /// Throws ConfigError naming the offending key; checks that referenced files exist.
  void validate() const;
};

/// Builds a config from a parsed table. Relative paths resolve against
/// `base_dir`. Unknown keys and wrongly typed values raise ConfigError.
ExperimentConfig from_table(const Table& table, const std::filesystem::path& base_dir = {});

/// Reads `path`, applies `overrides` ("section.key=value") on top and validates.
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Same as load_config without a file.
ExperimentConfig config_from_overrides(const std::vector<std::string>& overrides);

}  // namespace fedasync::config
