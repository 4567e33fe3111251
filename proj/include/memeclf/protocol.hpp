#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memeclf/dataset.hpp"
#include "memeclf/metrics.hpp"
#include "memeclf/training.hpp"

namespace memeclf {

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  void validate() const;  // positive, summing to 1
};

/// Indices into the labelled corpus, each list ascending.
struct SplitPlan {
  std::vector<std::size_t> train, val, test;
};

/// Stratified: per class, a seeded shuffle, then floor(ratio * class size)
/// records each to val and test and the rest to train. Unstratified does
/// the same over the whole corpus. A class with fewer than 3 members makes
/// stratification impossible and throws ValidationError.
SplitPlan split_train_val_test(const std::vector<int>& labels, const SplitRatios& ratios, std::uint64_t seed,
                               bool stratified = true);

struct FoldPlan {
  std::vector<std::size_t> holdout;            // ascending
  std::vector<std::vector<std::size_t>> folds; // each ascending
  Index k = 0;
  std::uint64_t seed = 0;
};

/// Holdout of exactly floor(holdout_ratio * N) records; when stratified, the
/// per-class quotas are floors plus largest-remainder rounding. The rest is
/// dealt round-robin into K folds class by class, the dealing position
/// carrying over between classes, so fold sizes (overall and per class)
/// differ by at most one. Throws ValidationError when K exceeds a class's
/// remaining count (or the remaining total, unstratified).
FoldPlan kfold_plan(const std::vector<int>& labels, Index k, double holdout_ratio, std::uint64_t seed,
                    bool stratified = true);

struct RunOutcome {
  std::string name;
  std::uint64_t seed = 0;
  TrainHistory history;
  MetricsReport test;
  ModelParams<float> params;
  ViltConfig model;
  Vocab vocab;
};

struct ProtocolResult {
  std::vector<RunOutcome> runs;
  MetricsReport aggregate;  // per-metric median (or mean) of the test reports
};

struct ProtocolOptions {
  TrainConfig train;
  ViltConfig model;           // vocab_size is replaced by each run's vocabulary
  std::size_t min_freq = 1;
  AggregateRule rule = AggregateRule::Median;
};

/// Records of one corpus selected by index.
struct Part {
  const PreparedCorpus* corpus = nullptr;
  std::vector<std::size_t> indices;
};

/// `runs` trainings on fixed train/val/test parts with seeds
/// base_seed .. base_seed+runs-1; the vocabulary comes from the train part.
ProtocolResult run_split(const Part& train, const Part& val, const Part& test, const ProtocolOptions& options,
                         Index runs, std::uint64_t base_seed);
ProtocolResult run_split(const PreparedCorpus& data, const SplitPlan& plan, const ProtocolOptions& options,
                         Index runs, std::uint64_t base_seed);

/// Fold i trains on the other folds, early-stops on fold i, and is scored on
/// the holdout, with seed base_seed + i and its own vocabulary.
ProtocolResult run_kfold(const PreparedCorpus& data, const FoldPlan& plan, const ProtocolOptions& options,
                         std::uint64_t base_seed);

}  // namespace memeclf
