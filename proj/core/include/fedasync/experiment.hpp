#pragma once

// Runs a configured experiment and writes its artifacts.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedasync/config.hpp"
#include "fedasync/sim.hpp"

namespace fedasync::experiment {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kConfigError = 2, kDiverged = 3, kProtocolError = 4 };

/// "FEDW0001", u64 little-endian dimension, then that many little-endian binary64 values.
void write_weights(std::ostream& out, const ParamVector& w);
void save_weights(const std::filesystem::path& path, const ParamVector& w);
/// Throws ParseError on bad magic or truncation, DimensionError when
/// `expected_dim` is given and differs.
ParamVector read_weights(std::istream& in, std::optional<std::size_t> expected_dim = std::nullopt);
ParamVector load_weights(const std::filesystem::path& path, std::optional<std::size_t> expected_dim = std::nullopt);

/// t,wall_clock_s,global_loss,grad_norm_sq,accuracy,staleness,beta_t,client_id
/// with %.17g numbers and empty cells where a metric was not evaluated.
void write_trace_csv(std::ostream& out, const sim::ExperimentTrace& trace);
void write_summary(std::ostream& out, const sim::TraceSummary& summary,
                   const std::vector<std::pair<std::string, std::string>>& extra = {});

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Self-contained SVG line chart.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

struct PreparedData {
  ModelSpec model;
  std::shared_ptr<const data::Dataset> train;
  std::shared_ptr<const data::Dataset> eval;
};

/// Generates or loads the dataset, splits off the held-out rows and fills in
/// the model's input and output widths.
PreparedData prepare_data(const config::ExperimentConfig& cfg);

/// Everything the simulator needs: data, shards, device profiles (cycled when
/// there are more clients than profiles), H policy and initial weights.
sim::SimConfig build_sim_config(const config::ExperimentConfig& cfg);

/// cfg.output_dir, or $FEDASYNC_OUT when set.
std::filesystem::path output_dir(const config::ExperimentConfig& cfg);

/// Runs cfg.mode, writes artifacts under output_dir(cfg) and returns the
/// process exit code. Progress goes to `log`.
int run(const config::ExperimentConfig& cfg, std::ostream& log);

}  // namespace fedasync::experiment
