#include "memeclf/report.hpp"

#include <fmt/format.h>

#include <cmath>
#include <filesystem>

#include "memeclf/errors.hpp"
#include "memeclf/io.hpp"
#include "memeclf/training.hpp"

namespace memeclf {

namespace fs = std::filesystem;
using nlohmann::json;

double round6(double value) {
  const double r = std::round(value * 1e6) / 1e6;
  return r == 0.0 ? 0.0 : r;  // no negative zero
}

json metrics_to_json(const MetricsReport& m) {
  json per_class = json::object();
  for (std::size_t c = 0; c < 2; ++c) {
    per_class[std::to_string(c)] = {{"precision", round6(m.per_class[c].precision)},
                                    {"recall", round6(m.per_class[c].recall)},
                                    {"f1", round6(m.per_class[c].f1)},
                                    {"support", m.per_class[c].support}};
  }
  return {{"loss", round6(m.loss)},
          {"precision", round6(m.precision)},
          {"recall", round6(m.recall)},
          {"f1_micro", round6(m.f1_micro)},
          {"f1_macro", round6(m.f1_macro)},
          {"f1_weighted", round6(m.f1_weighted)},
          {"per_class", per_class},
          {"confusion", {{"tp", m.counts.tp}, {"fp", m.counts.fp}, {"fn", m.counts.fn}, {"tn", m.counts.tn}}},
          {"n", m.n}};
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport m;
  m.loss = j.at("loss").get<double>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1_micro = j.at("f1_micro").get<double>();
  m.f1_macro = j.at("f1_macro").get<double>();
  m.f1_weighted = j.at("f1_weighted").get<double>();
  for (std::size_t c = 0; c < 2; ++c) {
    const json& pc = j.at("per_class").at(std::to_string(c));
    m.per_class[c] = {pc.at("precision").get<double>(), pc.at("recall").get<double>(), pc.at("f1").get<double>(),
                      pc.at("support").get<Index>()};
  }
  const json& cm = j.at("confusion");
  m.counts = {cm.at("tp").get<Index>(), cm.at("fp").get<Index>(), cm.at("fn").get<Index>(), cm.at("tn").get<Index>()};
  m.n = j.at("n").get<Index>();
  return m;
}

std::vector<std::string> fidelity_notes(const std::string& profile) {
  std::vector<std::string> notes = {
      "weights are trained from scratch; no pretrained vision-language checkpoint is loaded",
      "whether all encoder layers or only the head were fine-tuned in the reference setup is unknown",
      "text uses a corpus-built lowercase word/punctuation vocabulary instead of a pretrained subword tokenizer",
      "pooling is the CLS state through dense + tanh; the reference setup only says the features are pooled",
      "top-level precision is macro-averaged and recall micro-averaged; the reference averaging is not stated",
      "train:validation:test ratios default to 80:10:10; the reference ratios are not stated",
      "early stopping monitors validation loss (patience 3) and restores the best epoch",
      "k-fold holdout scores are the per-metric median over fold models",
      "rotation augmentation is applied to training samples only",
      "captions beyond 40 tokens are truncated"};
  notes.push_back("the 252x252 resize target is rounded up to 256x256 so that 32-pixel patches tile it (paper profile)");
  if (profile != "paper") notes.push_back("desk profile: D=64, 2 layers, 4 heads, 16-pixel patches on 64x64 images");
  return notes;
}

std::string table_csv(const std::vector<RunRecord>& runs, const MetricsReport& aggregate,
                      const std::string& aggregate_label) {
  std::string out = "run,loss,precision,recall,f1_micro,f1_macro,f1_weighted\n";
  auto row = [&](const std::string& name, const MetricsReport& m) {
    out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", name, round6(m.loss), round6(m.precision),
                       round6(m.recall), round6(m.f1_micro), round6(m.f1_macro), round6(m.f1_weighted));
  };
  for (const auto& r : runs) row(r.name, r.metrics);
  row(aggregate_label, aggregate);
  return out;
}

void emit_report(const ReportInput& input, const std::string& out_dir) {
  ensure_directory(out_dir);
  json runs = json::array();
  json seeds = json::array();
  for (const auto& r : input.runs) {
    json entry = {{"name", r.name}, {"seed", r.seed}, {"metrics", metrics_to_json(r.metrics)}};
    if (r.history) {
      entry["best_epoch"] = r.history->best_epoch;
      entry["stopped_early"] = r.history->stopped_early;
      entry["epochs_run"] = r.history->epochs.size();
      const fs::path dir = fs::path(out_dir) / r.name;
      ensure_directory(dir.string());
      write_file_atomic((dir / "curves.csv").string(), curves_csv(*r.history));
      write_file_atomic((dir / "history.json").string(), history_json(*r.history));
    }
    runs.push_back(entry);
    seeds.push_back(r.seed);
  }
  json report;
  report["report_version"] = kReportVersion;
  report["command"] = input.command;
  report["profile"] = input.profile;
  report["config"] = input.config;
  report["seeds"] = seeds;
  report["runs"] = runs;
  report["aggregate"] = metrics_to_json(input.aggregate);
  report["aggregate_rule"] = "per-metric " + input.aggregate_label;
  report["fidelity_notes"] = fidelity_notes(input.profile);
  for (const auto& [key, value] : input.extra.items()) report[key] = value;
  write_file_atomic((fs::path(out_dir) / "report.json").string(), report.dump(2) + "\n");
  write_file_atomic((fs::path(out_dir) / "table.csv").string(), table_csv(input.runs, input.aggregate, input.aggregate_label));
}

}  // namespace memeclf
