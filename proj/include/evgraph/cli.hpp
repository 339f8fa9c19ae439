#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "evgraph/engine.hpp"
#include "evgraph/graph.hpp"

namespace evg::cli {

// Everything a run needs. Precedence when assembling one:
// command-line flags > --config file > defaults.
struct RunConfig {
  GraphParams graph;
  engine::TrainConfig train;
  double train_fraction = 0.8;
  std::string activation = "elu";
  int spline_k = 5;
  std::string conv = "pointnet";

  std::optional<std::filesystem::path> dataset;  // directory or manifest file
  std::optional<std::filesystem::path> cache;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> report;
  std::optional<std::filesystem::path> history;

  [[nodiscard]] nlohmann::json to_json() const;
  // Overwrites the fields present in `j`; unknown keys are a config error.
  void merge(const nlohmann::json& j);
};

RunConfig load_run_config(const std::filesystem::path& path);

// Resolves a dataset argument to its manifest file.
std::filesystem::path manifest_path(const std::filesystem::path& dataset);

// Entry point behind the `evgraph` executable. Returns the process exit code:
// 0 on success, 2 on usage or configuration errors, 1 on runtime errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace evg::cli
