#pragma once

// Small builders shared by the test binaries.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fedasync/config.hpp"
#include "fedasync/experiment.hpp"
#include "fedasync/sim.hpp"

namespace fixtures {

inline std::filesystem::path source_path(const std::string& rel) {
  return std::filesystem::path(FEDASYNC_SOURCE_DIR) / rel;
}

inline std::filesystem::path hmdb_profiles() { return source_path("data/profiles/jetson_hmdb51.csv"); }

/// Simulation config built the same way the CLI builds it, from key=value overrides.
inline fedasync::sim::SimConfig sim_from(const std::vector<std::string>& overrides) {
  return fedasync::experiment::build_sim_config(fedasync::config::config_from_overrides(overrides));
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fedasync_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Dataset from literal rows; labels are the last entry of each row.
inline std::shared_ptr<const fedasync::data::Dataset> rows_dataset(const std::vector<std::vector<double>>& rows,
                                                                  std::optional<std::size_t> classes) {
  auto ds = std::make_shared<fedasync::data::Dataset>();
  const std::size_t cols = rows.front().size() - 1;
  ds->features = fedasync::Matrix(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) ds->features(r, c) = rows[r][c];
    ds->labels.push_back(rows[r][cols]);
  }
  ds->num_classes = classes;
  return ds;
}

}  // namespace fixtures
