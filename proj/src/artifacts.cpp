#include "sbir/artifacts.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sbir {

void MetricsTable::add_row(std::vector<std::optional<double>> row) {
  if (row.size() != columns.size()) {
    throw std::invalid_argument("metrics: row width does not match columns");
  }
  rows.push_back(std::move(row));
}

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_metrics_csv(const MetricsTable& table,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (c) out << ',';
    out << table.columns[c];
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << ',';
      if (row[c]) out << format_metric(*row[c]);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

MetricsTable read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  MetricsTable table;
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error(path.string() + ": missing metrics header");
  }
  std::stringstream header(line);
  std::string cell;
  while (std::getline(header, cell, ',')) table.columns.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::optional<double>> row;
    std::size_t start = 0;
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      std::size_t end = line.find(',', start);
      std::string field = line.substr(
          start, end == std::string::npos ? std::string::npos : end - start);
      if (field.empty()) {
        row.push_back(std::nullopt);
      } else {
        row.push_back(std::stod(field));
      }
      start = end == std::string::npos ? line.size() : end + 1;
    }
    table.add_row(std::move(row));
  }
  return table;
}

nlohmann::json metrics_to_json(const MetricsTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : table.rows) {
    nlohmann::json jrow = nlohmann::json::array();
    for (const auto& cell : row) {
      if (cell) {
        // Round-trip through the canonical text form so CSV and JSON carry
        // identical values.
        jrow.push_back(std::stod(format_metric(*cell)));
      } else {
        jrow.push_back(nullptr);
      }
    }
    rows.push_back(std::move(jrow));
  }
  return nlohmann::json{{"columns", table.columns}, {"rows", rows}};
}

MetricsTable metrics_from_json(const nlohmann::json& j) {
  MetricsTable table;
  table.columns = j.at("columns").get<std::vector<std::string>>();
  for (const auto& jrow : j.at("rows")) {
    std::vector<std::optional<double>> row;
    for (const auto& cell : jrow) {
      if (cell.is_null()) {
        row.push_back(std::nullopt);
      } else {
        row.push_back(cell.get<double>());
      }
    }
    table.add_row(std::move(row));
  }
  return table;
}

void write_run_artifacts(const RunArtifacts& artifacts) {
  std::filesystem::create_directories(artifacts.dir);
  std::ofstream cfg(artifacts.dir / "config.json");
  if (!cfg) {
    throw std::runtime_error("cannot open " +
                             (artifacts.dir / "config.json").string());
  }
  cfg << artifacts.config_echo.dump(2) << '\n';
  write_metrics_csv(artifacts.metrics, artifacts.dir / "metrics.csv");
}

}  // namespace sbir
