#pragma once

#include <array>
#include <string>
#include <vector>

#include "memeclf/tensor.hpp"

namespace memeclf {

/// Class 1 is the positive class.
struct ConfusionMatrix {
  Index tp = 0, fp = 0, fn = 0, tn = 0;
  Index n() const { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(const std::vector<int>& predicted, const std::vector<int>& truth);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Index support = 0;
  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

enum class Average { Micro, Macro, Weighted };
Average parse_average(const std::string& name);
std::string to_string(Average average);

struct MetricsReport {
  double loss = 0.0;
  double precision = 0.0;  // macro by default, see compute_metrics
  double recall = 0.0;     // micro, which equals accuracy
  double f1_micro = 0.0;
  double f1_macro = 0.0;
  double f1_weighted = 0.0;
  std::array<ClassMetrics, 2> per_class{};  // classes 0 and 1
  ConfusionMatrix counts;
  Index n = 0;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Metrics of hard predictions. Undefined ratios (0/0) are 0.
MetricsReport metrics_from_predictions(const std::vector<int>& predicted, const std::vector<int>& truth,
                                       double loss = 0.0, Average precision_average = Average::Macro);

/// Predictions are probability >= threshold.
MetricsReport compute_metrics(const std::vector<double>& probs, const std::vector<int>& truth,
                              double loss, double threshold = 0.5,
                              Average precision_average = Average::Macro);

/// Middle order statistic, or the mean of the two middle values.
double median(std::vector<double> values);

/// Field-wise median over `reports`; confusion counts are medians rounded down.
MetricsReport aggregate_median(const std::vector<MetricsReport>& reports);

/// Field-wise arithmetic mean; confusion counts are rounded down.
MetricsReport aggregate_mean(const std::vector<MetricsReport>& reports);

enum class AggregateRule { Median, Mean };
AggregateRule parse_aggregate_rule(const std::string& name);
std::string to_string(AggregateRule rule);
MetricsReport aggregate(const std::vector<MetricsReport>& reports, AggregateRule rule);

}  // namespace memeclf
