#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace sbir {

/// Column-ordered metrics time series. Cells are optional so a row can skip
/// columns that were not measured that epoch (empty CSV fields, JSON nulls).
struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> rows;

  void add_row(std::vector<std::optional<double>> row);
};

/// Canonical float formatting used by every metrics artifact: 9 significant
/// digits, so re-serialization is byte-stable.
std::string format_metric(double v);

void write_metrics_csv(const MetricsTable& table,
                       const std::filesystem::path& path);
MetricsTable read_metrics_csv(const std::filesystem::path& path);

nlohmann::json metrics_to_json(const MetricsTable& table);
MetricsTable metrics_from_json(const nlohmann::json& j);

/// On-disk layout of one pipeline run.
struct RunArtifacts {
  std::filesystem::path dir;
  nlohmann::json config_echo;
  MetricsTable metrics;
  double initial_recall = 0.0;
  double best_recall = 0.0;
  std::size_t best_epoch = 0;
  double final_recall = 0.0;
  std::map<std::string, std::filesystem::path> checkpoints;
};

/// Writes config.json and metrics.csv under artifacts.dir.
void write_run_artifacts(const RunArtifacts& artifacts);

}  // namespace sbir
