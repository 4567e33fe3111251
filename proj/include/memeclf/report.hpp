#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "memeclf/metrics.hpp"

namespace memeclf {

struct TrainHistory;

inline constexpr int kReportVersion = 1;

/// Rounds to six decimal places, the precision of every emitted value.
double round6(double value);

nlohmann::json metrics_to_json(const MetricsReport& metrics);
MetricsReport metrics_from_json(const nlohmann::json& j);

struct RunRecord {
  std::string name;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  const TrainHistory* history = nullptr;  // optional; enables curves.csv
};

struct ReportInput {
  std::string command;
  std::string profile;
  nlohmann::json config;  // resolved configuration, echoed verbatim
  std::vector<RunRecord> runs;
  MetricsReport aggregate;
  std::string aggregate_label = "median";
  nlohmann::json extra = nlohmann::json::object();  // protocol details
};

/// Known gaps between this implementation and the published setup.
std::vector<std::string> fidelity_notes(const std::string& profile);

/// `run,loss,precision,recall,f1_micro,f1_macro,f1_weighted`; one row per
/// run and a final aggregate row.
std::string table_csv(const std::vector<RunRecord>& runs, const MetricsReport& aggregate,
                      const std::string& aggregate_label = "median");

/// report.json, table.csv and, per run with a history, <run>/curves.csv and
/// <run>/history.json under `out_dir`.
void emit_report(const ReportInput& input, const std::string& out_dir);

}  // namespace memeclf
