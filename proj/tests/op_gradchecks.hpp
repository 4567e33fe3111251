#pragma once

// Central-difference checks of every differentiable kernel, one random shape
// (up to 8 per axis) per seed. Shared by the unit tests and the acceptance
// binary.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "memeclf/gradcheck.hpp"
#include "memeclf/ops.hpp"
#include "memeclf/rng.hpp"
#include "memeclf/tensor.hpp"

namespace memeclf::opcheck {

struct Result {
  std::string op;
  std::uint64_t seed = 0;
  double max_relative_error = 0.0;
  bool pass = true;
};

inline Matrix<double> random_matrix(Index rows, Index cols, RngStream& rng, double lo = -1, double hi = 1) {
  Matrix<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

inline Index random_extent(RngStream& rng) { return 1 + static_cast<Index>(rng.uniform_index(8)); }

inline NamedTensors<double> named(std::initializer_list<std::pair<const char*, Matrix<double>>> items) {
  NamedTensors<double> out;
  for (const auto& [name, m] : items) out.push_back({name, Tensor<double>::from_matrix(m)});
  return out;
}

// Loss = <W, f(x)> for a fixed random weighting W, so dLoss/df = W.
inline double weighted_sum(const Matrix<double>& y, const Matrix<double>& w) {
  return (y.array() * w.array()).sum();
}

inline void set_grad(NamedTensor<double>& p, const Matrix<double>& g) {
  p.tensor.grad() = Eigen::Map<const Vector<double>>(g.data(), g.size());
}

inline const GradCheckOptions kDefault{1e-3, 1e-4};

inline Result matmul_check(std::uint64_t seed) {
  RngStream rng(seed, 1);
  const Index m = random_extent(rng), k = random_extent(rng), n = random_extent(rng);
  const Matrix<double> w = random_matrix(m, n, rng);
  auto params = named({{"a", random_matrix(m, k, rng)}, {"b", random_matrix(k, n, rng)}});
  LossFn loss = [&](NamedTensors<double>& p, bool with_grad) {
    const auto a = p[0].tensor.matrix();
    const auto b = p[1].tensor.matrix();
    if (with_grad) {
      auto g = matmul_backward<double>(a, b, w);
      set_grad(p[0], g.da);
      set_grad(p[1], g.db);
    }
    return weighted_sum(matmul<double>(a, b), w);
  };
  const auto r = check_gradient(loss, params, kDefault);
  return {"matmul", seed, r.max_relative_error, r.pass};
}

inline Result layer_norm_check(std::uint64_t seed) {
  RngStream rng(seed, 2);
  const Index rows = random_extent(rng);
  const Index d = 1 + random_extent(rng);
  const Matrix<double> w = random_matrix(rows, d, rng);
  // Rows get a standard deviation of at least 1: the curvature of layer
  // norm grows like 1/sigma^3, which swamps central differences otherwise.
  Matrix<double> x = random_matrix(rows, d, rng, -2, 2);
  for (Index r = 0; r < rows; ++r) {
    RowVector<double> c = x.row(r).array() - x.row(r).mean();
    const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(d));
    x.row(r) = c / sd * rng.uniform(1.0, 2.0);
    x.row(r).array() += rng.uniform(-2, 2);
  }
  auto params = named({{"x", x}, {"gamma", random_matrix(1, d, rng, 0.5, 1.5)}, {"beta", random_matrix(1, d, rng)}});
  LossFn loss = [&](NamedTensors<double>& p, bool with_grad) {
    const RowVector<double> gamma = p[1].tensor.matrix();
    const RowVector<double> beta = p[2].tensor.matrix();
    LayerNormCache<double> cache;
    const Matrix<double> y = layer_norm<double>(p[0].tensor.matrix(), gamma, beta, 1e-5, &cache);
    if (with_grad) {
      auto g = layer_norm_backward<double>(w, gamma, cache);
      set_grad(p[0], g.dx);
      p[1].tensor.grad() = g.dgamma.transpose();
      p[2].tensor.grad() = g.dbeta.transpose();
    }
    return weighted_sum(y, w);
  };
  // Sums of cancelling terms leave some x coordinates near zero, where the
  // h^2 truncation term at h = 1e-3 dominates the relative error.
  const auto r = check_gradient(loss, params, {1e-4, 1e-4});
  return {"layer_norm", seed, r.max_relative_error, r.pass};
}

// Odd seeds apply a random key mask (the first entry always kept).
inline Result softmax_check(std::uint64_t seed) {
  RngStream rng(seed, 3);
  const Index rows = random_extent(rng);
  const Index d = random_extent(rng);
  const Matrix<double> w = random_matrix(rows, d, rng);
  RowVector<double> mask = RowVector<double>::Ones(d);
  for (Index c = 1; c < d; ++c) mask(c) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  const bool masked = seed % 2 == 1;
  auto params = named({{"x", random_matrix(rows, d, rng, -3, 3)}});
  LossFn loss = [&](NamedTensors<double>& p, bool with_grad) {
    const Matrix<double> y = softmax_rows<double>(p[0].tensor.matrix(), masked ? &mask : nullptr);
    if (with_grad) set_grad(p[0], softmax_rows_backward<double>(y, w));
    return weighted_sum(y, w);
  };
  const auto r = check_gradient(loss, params, kDefault);
  return {masked ? "softmax_masked" : "softmax", seed, r.max_relative_error, r.pass};
}

enum class Activation { Relu, Gelu, Sigmoid, Tanh };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Gelu: return "gelu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

inline Result activation_check(Activation kind, std::uint64_t seed) {
  RngStream rng(seed, 4 + static_cast<std::uint64_t>(kind));
  const Index rows = random_extent(rng), cols = random_extent(rng);
  const Matrix<double> w = random_matrix(rows, cols, rng);
  Matrix<double> x = random_matrix(rows, cols, rng, -3, 3);
  // Keep ReLU inputs away from the kink so +-h never straddles it, and
  // GELU inputs away from its minimum where the derivative vanishes.
  if (kind == Activation::Relu) x = x.unaryExpr([](double v) { return v >= 0 ? v + 0.01 : v - 0.01; });
  if (kind == Activation::Gelu) {
    x = x.unaryExpr([](double v) { return std::abs(v + 0.7518) < 0.1 ? v - 0.2 : v; });
  }
  auto params = named({{"x", x}});
  LossFn loss = [&](NamedTensors<double>& p, bool with_grad) {
    const auto in = p[0].tensor.matrix();
    Matrix<double> y;
    Matrix<double> dx;
    switch (kind) {
      case Activation::Relu:
        y = relu(in);
        if (with_grad) dx = relu_backward<double>(in, w);
        break;
      case Activation::Gelu:
        y = gelu(in);
        if (with_grad) dx = gelu_backward<double>(in, w);
        break;
      case Activation::Sigmoid:
        y = sigmoid(in);
        if (with_grad) dx = sigmoid_backward<double>(y, w);
        break;
      case Activation::Tanh:
        y = tanh(in);
        if (with_grad) dx = tanh_backward<double>(y, w);
        break;
    }
    if (with_grad) set_grad(p[0], dx);
    return weighted_sum(y, w);
  };
  const auto r = check_gradient(loss, params, kDefault);
  return {to_string(kind), seed, r.max_relative_error, r.pass};
}

inline Result dropout_check(std::uint64_t seed) {
  RngStream rng(seed, 9);
  const Index rows = random_extent(rng), cols = random_extent(rng);
  const Matrix<double> w = random_matrix(rows, cols, rng);
  const Matrix<double> mask = dropout_mask<double>(rows, cols, 0.3, rng);
  auto params = named({{"x", random_matrix(rows, cols, rng)}});
  LossFn loss = [&](NamedTensors<double>& p, bool with_grad) {
    const Matrix<double> y = p[0].tensor.matrix().cwiseProduct(mask);
    if (with_grad) set_grad(p[0], w.cwiseProduct(mask));
    return weighted_sum(y, w);
  };
  const auto r = check_gradient(loss, params, kDefault);
  return {"dropout", seed, r.max_relative_error, r.pass};
}

/// Every op at seeds 0 .. seeds-1.
inline std::vector<Result> all(std::uint64_t seeds = 100) {
  std::vector<Result> out;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    out.push_back(matmul_check(s));
    out.push_back(layer_norm_check(s));
    out.push_back(softmax_check(s));
    for (Activation a : {Activation::Relu, Activation::Gelu, Activation::Sigmoid, Activation::Tanh}) {
      out.push_back(activation_check(a, s));
    }
    out.push_back(dropout_check(s));
  }
  return out;
}

}  // namespace memeclf::opcheck
