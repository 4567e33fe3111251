#include "memeclf/protocol.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "memeclf/errors.hpp"

namespace memeclf {

void SplitRatios::validate() const {
  if (!(train > 0.0 && val > 0.0 && test > 0.0)) throw ConfigError("split ratios must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

namespace {

// floor(r * n) with a small allowance for products like 0.29 * 100.
std::size_t floor_share(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

// Record indices grouped by label (one group when unstratified), each group
// shuffled by its own stream.
std::vector<std::vector<std::size_t>> shuffled_groups(const std::vector<int>& labels, const RngStream& rng,
                                                      bool stratified) {
  std::vector<std::vector<std::size_t>> groups(stratified ? 2 : 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("labels must be 0 or 1");
    groups[stratified ? static_cast<std::size_t>(labels[i]) : 0].push_back(i);
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    RngStream stream = rng.derive(static_cast<std::uint64_t>(g));
    stream.shuffle(groups[g]);
  }
  return groups;
}

void sort_all(std::vector<std::size_t>& v) { std::sort(v.begin(), v.end()); }

}  // namespace

SplitPlan split_train_val_test(const std::vector<int>& labels, const SplitRatios& ratios, std::uint64_t seed,
                               bool stratified) {
  ratios.validate();
  if (labels.empty()) throw ValidationError("cannot split an empty corpus");
  const auto groups = shuffled_groups(labels, RngStream(seed, 0x73706c6974), stratified);
  SplitPlan plan;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& members = groups[g];
    if (members.empty()) continue;
    if (stratified && members.size() < 3) {
      throw ValidationError(fmt::format("class {} has only {} records; use an unstratified split", g, members.size()));
    }
    const std::size_t n_val = floor_share(ratios.val, members.size());
    const std::size_t n_test = floor_share(ratios.test, members.size());
    plan.val.insert(plan.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    plan.test.insert(plan.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val),
                     members.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    plan.train.insert(plan.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), members.end());
  }
  sort_all(plan.train);
  sort_all(plan.val);
  sort_all(plan.test);
  return plan;
}

FoldPlan kfold_plan(const std::vector<int>& labels, Index k, double holdout_ratio, std::uint64_t seed,
                    bool stratified) {
  if (k < 2) throw ValidationError("k-fold needs K >= 2");
  if (!(holdout_ratio > 0.0 && holdout_ratio < 1.0)) throw ValidationError("holdout ratio must lie in (0, 1)");
  if (labels.empty()) throw ValidationError("cannot plan folds over an empty corpus");
  const auto groups = shuffled_groups(labels, RngStream(seed, 0x6b666f6c64), stratified);

  // Holdout quotas: floors, then the leftover by largest fractional part.
  const std::size_t total = floor_share(holdout_ratio, labels.size());
  std::vector<std::size_t> quota(groups.size());
  std::vector<double> remainder(groups.size());
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double exact = holdout_ratio * static_cast<double>(groups[g].size());
    quota[g] = std::min(groups[g].size(), floor_share(holdout_ratio, groups[g].size()));
    remainder[g] = exact - static_cast<double>(quota[g]);
    assigned += quota[g];
  }
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % order.size()) {
    if (quota[order[i]] < groups[order[i]].size()) {
      ++quota[order[i]];
      ++assigned;
    }
  }

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.resize(static_cast<std::size_t>(k));
  std::size_t next = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& members = groups[g];
    const std::size_t rest = members.size() - quota[g];
    if (rest > 0 && static_cast<Index>(rest) < k) {
      throw ValidationError(fmt::format("K={} exceeds the {} remaining records of {}", k, rest,
                                        stratified ? "class " + std::to_string(g) : std::string("the corpus")));
    }
    plan.holdout.insert(plan.holdout.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota[g]));
    for (std::size_t i = quota[g]; i < members.size(); ++i) {
      plan.folds[next].push_back(members[i]);
      next = (next + 1) % plan.folds.size();
    }
  }
  sort_all(plan.holdout);
  for (auto& f : plan.folds) sort_all(f);
  return plan;
}

namespace {

RunOutcome train_and_score(const Part& train_part, const Part& val_part, const Part& test_part,
                           const ProtocolOptions& options, std::uint64_t seed, const std::string& name) {
  RunOutcome out;
  out.name = name;
  out.seed = seed;
  out.vocab = vocab_for(*train_part.corpus, train_part.indices, options.min_freq);
  ViltConfig model = options.model;
  model.vocab_size = out.vocab.size();
  out.model = model;
  TrainConfig train = options.train;
  train.seed = seed;
  const Dataset train_set = make_dataset(*train_part.corpus, train_part.indices, out.vocab, model);
  const Dataset val_set = make_dataset(*val_part.corpus, val_part.indices, out.vocab, model);
  const Dataset test_set = make_dataset(*test_part.corpus, test_part.indices, out.vocab, model);
  spdlog::info("{}: train {} / val {} / test {}, vocabulary {}, seed {}", name, train_set.size(), val_set.size(),
               test_set.size(), out.vocab.size(), seed);
  TrainResult r = train_model(train, model, train_set, val_set);
  out.test = evaluate(r.params, model, test_set, train.eval_batch, train.precision_average).metrics;
  out.history = std::move(r.history);
  out.params = std::move(r.params);
  spdlog::info("{}: best epoch {}, test loss {:.6f}, f1_weighted {:.6f}", name, out.history.best_epoch,
               out.test.loss, out.test.f1_weighted);
  return out;
}

MetricsReport combine(const std::vector<RunOutcome>& runs, AggregateRule rule) {
  std::vector<MetricsReport> reports;
  for (const auto& r : runs) reports.push_back(r.test);
  return aggregate(reports, rule);
}

}  // namespace

ProtocolResult run_split(const Part& train, const Part& val, const Part& test, const ProtocolOptions& options,
                         Index runs, std::uint64_t base_seed) {
  if (runs < 1) throw ConfigError("eval.runs must be at least 1");
  for (const Part* p : {&train, &val, &test}) {
    if (p->corpus == nullptr || p->indices.empty()) throw ValidationError("every split part needs records");
  }
  ProtocolResult result;
  for (Index r = 0; r < runs; ++r) {
    result.runs.push_back(train_and_score(train, val, test, options, base_seed + static_cast<std::uint64_t>(r),
                                          fmt::format("run{}", r + 1)));
  }
  result.aggregate = combine(result.runs, options.rule);
  return result;
}

ProtocolResult run_split(const PreparedCorpus& data, const SplitPlan& plan, const ProtocolOptions& options,
                         Index runs, std::uint64_t base_seed) {
  return run_split(Part{&data, plan.train}, Part{&data, plan.val}, Part{&data, plan.test}, options, runs, base_seed);
}

ProtocolResult run_kfold(const PreparedCorpus& data, const FoldPlan& plan, const ProtocolOptions& options,
                         std::uint64_t base_seed) {
  ProtocolResult result;
  for (std::size_t i = 0; i < plan.folds.size(); ++i) {
    std::vector<std::size_t> train_idx;
    for (std::size_t j = 0; j < plan.folds.size(); ++j) {
      if (j != i) train_idx.insert(train_idx.end(), plan.folds[j].begin(), plan.folds[j].end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    result.runs.push_back(train_and_score(Part{&data, train_idx}, Part{&data, plan.folds[i]},
                                          Part{&data, plan.holdout}, options,
                                          base_seed + static_cast<std::uint64_t>(i), fmt::format("fold{}", i + 1)));
  }
  result.aggregate = combine(result.runs, options.rule);
  return result;
}

}  // namespace memeclf
