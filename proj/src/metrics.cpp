#include "memeclf/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "memeclf/errors.hpp"

namespace memeclf {

Average parse_average(const std::string& name) {
  if (name == "micro") return Average::Micro;
  if (name == "macro") return Average::Macro;
  if (name == "weighted") return Average::Weighted;
  throw ConfigError("unknown averaging '" + name + "' (expected micro, macro or weighted)");
}

std::string to_string(Average average) {
  switch (average) {
    case Average::Micro: return "micro";
    case Average::Weighted: return "weighted";
    case Average::Macro: break;
  }
  return "macro";
}

ConfusionMatrix confusion(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) {
    throw ShapeError(fmt::format("confusion: {} predictions vs {} labels", predicted.size(), truth.size()));
  }
  if (truth.empty()) throw ShapeError("confusion: empty input");
  ConfusionMatrix c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = predicted[i];
    const int y = truth[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) throw ValidationError("confusion: values must be 0 or 1");
    if (p == 1 && y == 1) ++c.tp;
    if (p == 1 && y == 0) ++c.fp;
    if (p == 0 && y == 1) ++c.fn;
    if (p == 0 && y == 0) ++c.tn;
  }
  return c;
}

namespace {

double ratio(Index num, Index den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }

ClassMetrics class_metrics(Index tp, Index fp, Index fn) {
  ClassMetrics m;
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  m.support = tp + fn;
  return m;
}

}  // namespace

MetricsReport metrics_from_predictions(const std::vector<int>& predicted, const std::vector<int>& truth,
                                       double loss, Average precision_average) {
  const ConfusionMatrix c = confusion(predicted, truth);
  MetricsReport r;
  r.loss = loss;
  r.counts = c;
  r.n = c.n();
  r.per_class[1] = class_metrics(c.tp, c.fp, c.fn);
  r.per_class[0] = class_metrics(c.tn, c.fn, c.fp);
  const double n = static_cast<double>(r.n);
  const double w0 = static_cast<double>(r.per_class[0].support) / n;
  const double w1 = static_cast<double>(r.per_class[1].support) / n;
  // Single-label binary: pooled TP over all classes is tp + tn, and pooled
  // FP and FN both equal fp + fn.
  r.f1_micro = ratio(c.tp + c.tn, r.n);
  r.f1_macro = (r.per_class[0].f1 + r.per_class[1].f1) / 2.0;
  r.f1_weighted = w0 * r.per_class[0].f1 + w1 * r.per_class[1].f1;
  r.recall = r.f1_micro;
  switch (precision_average) {
    case Average::Micro: r.precision = r.f1_micro; break;
    case Average::Macro: r.precision = (r.per_class[0].precision + r.per_class[1].precision) / 2.0; break;
    case Average::Weighted: r.precision = w0 * r.per_class[0].precision + w1 * r.per_class[1].precision; break;
  }
  return r;
}

MetricsReport compute_metrics(const std::vector<double>& probs, const std::vector<int>& truth, double loss,
                              double threshold, Average precision_average) {
  if (probs.size() != truth.size()) {
    throw ShapeError(fmt::format("metrics: {} probabilities vs {} labels", probs.size(), truth.size()));
  }
  if (probs.empty()) throw ShapeError("metrics: empty input");
  std::vector<int> predicted(probs.size());
  std::transform(probs.begin(), probs.end(), predicted.begin(), [&](double p) { return p >= threshold ? 1 : 0; });
  return metrics_from_predictions(predicted, truth, loss, precision_average);
}

double median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : (values[mid - 1] + values[mid]) / 2.0;
}

namespace {

template <typename Reduce>
MetricsReport aggregate_with(const std::vector<MetricsReport>& reports, Reduce reduce) {
  if (reports.empty()) throw ValidationError("aggregation needs at least one report");
  auto field = [&](auto get) {
    std::vector<double> v;
    v.reserve(reports.size());
    for (const auto& r : reports) v.push_back(static_cast<double>(get(r)));
    return reduce(std::move(v));
  };
  auto count = [&](auto get) { return static_cast<Index>(std::floor(field(get))); };
  MetricsReport m;
  m.loss = field([](const MetricsReport& r) { return r.loss; });
  m.precision = field([](const MetricsReport& r) { return r.precision; });
  m.recall = field([](const MetricsReport& r) { return r.recall; });
  m.f1_micro = field([](const MetricsReport& r) { return r.f1_micro; });
  m.f1_macro = field([](const MetricsReport& r) { return r.f1_macro; });
  m.f1_weighted = field([](const MetricsReport& r) { return r.f1_weighted; });
  for (std::size_t c = 0; c < 2; ++c) {
    m.per_class[c].precision = field([c](const MetricsReport& r) { return r.per_class[c].precision; });
    m.per_class[c].recall = field([c](const MetricsReport& r) { return r.per_class[c].recall; });
    m.per_class[c].f1 = field([c](const MetricsReport& r) { return r.per_class[c].f1; });
    m.per_class[c].support = count([c](const MetricsReport& r) { return r.per_class[c].support; });
  }
  m.counts.tp = count([](const MetricsReport& r) { return r.counts.tp; });
  m.counts.fp = count([](const MetricsReport& r) { return r.counts.fp; });
  m.counts.fn = count([](const MetricsReport& r) { return r.counts.fn; });
  m.counts.tn = count([](const MetricsReport& r) { return r.counts.tn; });
  m.n = count([](const MetricsReport& r) { return r.n; });
  return m;
}

}  // namespace

MetricsReport aggregate_median(const std::vector<MetricsReport>& reports) {
  return aggregate_with(reports, [](std::vector<double> v) { return median(std::move(v)); });
}

MetricsReport aggregate_mean(const std::vector<MetricsReport>& reports) {
  return aggregate_with(reports, [](std::vector<double> v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
  });
}

AggregateRule parse_aggregate_rule(const std::string& name) {
  if (name == "median") return AggregateRule::Median;
  if (name == "mean") return AggregateRule::Mean;
  throw ConfigError("unknown aggregate rule '" + name + "' (expected median or mean)");
}

std::string to_string(AggregateRule rule) { return rule == AggregateRule::Median ? "median" : "mean"; }

MetricsReport aggregate(const std::vector<MetricsReport>& reports, AggregateRule rule) {
  return rule == AggregateRule::Median ? aggregate_median(reports) : aggregate_mean(reports);
}

}  // namespace memeclf
