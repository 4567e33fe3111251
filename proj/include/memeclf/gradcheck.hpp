#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "memeclf/tensor.hpp"

namespace memeclf {

/// Evaluates a scalar loss at `params`. When `with_grad` is true the callee
/// must also store dLoss/dparam into each tensor's `grad()`.
using LossFn = std::function<double(NamedTensors<double>& params, bool with_grad)>;

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-4;
  /// Coordinates checked per tensor; 0 checks every coordinate. When
  /// sampling, the largest-magnitude analytic coordinate is always included
  /// and the rest are drawn uniformly from `seed`.
  Index max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct ParamGradCheck {
  std::string name;
  Index coords_checked = 0;
  double max_relative_error = 0.0;
  Index worst_coord = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<ParamGradCheck> params;
  double max_relative_error = 0.0;
  double step = 0.0;
  double tolerance = 0.0;
  bool pass = true;
};

/// |a - n| / max(|a|, |n|, 1e-12).
double relative_error(double analytic, double numeric);

/// Compares analytic gradients with central differences
/// (L(t + h) - L(t - h)) / 2h, coordinate by coordinate.
/// Throws NumericError naming the tensor if any loss evaluation is non-finite.
GradCheckReport check_gradient(const LossFn& loss_fn, NamedTensors<double> params,
                               const GradCheckOptions& options = {});

}  // namespace memeclf
