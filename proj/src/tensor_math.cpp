#include <algorithm>
#include <cmath>
#include <set>

#include "memeclf/gradcheck.hpp"
#include "memeclf/rng.hpp"
#include "memeclf/tensor.hpp"

namespace memeclf {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

namespace {

std::vector<Index> pick_coordinates(const Vector<double>& analytic, Index limit, RngStream& rng) {
  const Index n = analytic.size();
  std::vector<Index> coords;
  if (limit <= 0 || limit >= n) {
    coords.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    return coords;
  }
  std::set<Index> chosen;
  Index argmax = 0;
  analytic.cwiseAbs().maxCoeff(&argmax);
  chosen.insert(argmax);
  while (static_cast<Index>(chosen.size()) < limit) {
    chosen.insert(static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(n))));
  }
  return {chosen.begin(), chosen.end()};
}

}  // namespace

GradCheckReport check_gradient(const LossFn& loss_fn, NamedTensors<double> params,
                               const GradCheckOptions& options) {
  GradCheckReport report;
  report.step = options.step;
  report.tolerance = options.tolerance;

  for (auto& p : params) p.tensor.zero_grad();
  const double base = loss_fn(params, true);
  if (!std::isfinite(base)) throw NumericError("gradient check: non-finite loss at base point");

  std::vector<Vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.tensor.grad());
  for (auto& p : params) p.tensor.clear_grad();

  RngStream rng(options.seed, 0x67636b);
  const double h = options.step;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& tensor = params[pi].tensor;
    ParamGradCheck check;
    check.name = params[pi].name;
    for (Index c : pick_coordinates(analytic[pi], options.max_coords_per_tensor, rng)) {
      const double saved = tensor[c];
      tensor[c] = saved + h;
      const double plus = loss_fn(params, false);
      tensor[c] = saved - h;
      const double minus = loss_fn(params, false);
      tensor[c] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("gradient check: non-finite loss while perturbing " + check.name +
                           "[" + std::to_string(c) + "]");
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(analytic[pi](c), numeric);
      ++check.coords_checked;
      if (err > check.max_relative_error || check.worst_coord < 0) {
        check.max_relative_error = std::max(err, check.max_relative_error);
        if (err >= check.max_relative_error) {
          check.worst_coord = c;
          check.analytic_at_worst = analytic[pi](c);
          check.numeric_at_worst = numeric;
        }
      }
    }
    check.pass = check.max_relative_error <= options.tolerance;
    report.max_relative_error = std::max(report.max_relative_error, check.max_relative_error);
    report.pass = report.pass && check.pass;
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace memeclf
