#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "memeclf/metrics.hpp"
#include "memeclf/ocr.hpp"
#include "memeclf/protocol.hpp"
#include "memeclf/training.hpp"
#include "memeclf/vilt_config.hpp"

namespace memeclf {

struct DataConfig {
  std::string manifest;
  std::string val_manifest;   // with test_manifest: fixed parts instead of a split
  std::string test_manifest;
  OcrConfig ocr;
  std::size_t min_freq = 1;
};

struct EvalConfig {
  std::string protocol = "split";  // split | kfold
  Index k = 5;
  double holdout_ratio = 0.10;
  SplitRatios ratios;
  Index runs = 1;
  std::uint64_t base_seed = 0;
  bool stratified = true;
  AggregateRule rule = AggregateRule::Median;
};

/// Everything one invocation needs. Keys are dotted (`model.hidden_dim`,
/// `train.learning_rate`, `data.manifest`, `eval.k`, `output.dir`, plus the
/// top-level `profile`); `keys()` lists them all.
struct RunConfig {
  std::string profile = "desk";
  ViltConfig model = ViltConfig::desk();
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  std::string output_dir;

  /// Throws ConfigError for an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  nlohmann::json to_json() const;
  void validate() const;
  static std::vector<std::string> keys();
};

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// `key = value` per line; `#` starts a comment; blank lines are ignored.
ConfigEntries parse_config_text(const std::string& text, const std::string& source = "<config>");

/// Applies `profile` entries first (they reset the model to that profile),
/// then the rest in order, so later entries win. An empty output directory
/// falls back to $MEMECLF_OUTPUT_DIR, then to `memeclf_out`.
RunConfig resolve_config(const ConfigEntries& entries);

/// The `memeclf` command line. Returns the process exit code: 0 success,
/// 1 invalid input or usage, 2 runtime failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace memeclf
