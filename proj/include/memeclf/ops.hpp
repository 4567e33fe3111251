#pragma once

// Dense kernels with hand-written reverse-mode derivatives.
//
// Every forward function works row-wise on row-major Eigen matrices and, when
// a cache pointer is supplied, records what its `*_backward` counterpart
// needs. Backward functions take the upstream gradient and return the
// gradient with respect to each differentiable operand.

#include <Eigen/Core>

#include <cmath>
#include <concepts>
#include <limits>
#include <numbers>
#include <string>

#include "memeclf/errors.hpp"
#include "memeclf/rng.hpp"
#include "memeclf/tensor.hpp"

namespace memeclf {

enum class Mode { Train, Infer };

// ---------------------------------------------------------------------------
// matmul

template <typename Scalar>
Matrix<Scalar> matmul(const Eigen::Ref<const Matrix<Scalar>>& a,
                      const Eigen::Ref<const Matrix<Scalar>>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.rows(), a.cols()) +
                     " x " + shape_string(b.rows(), b.cols()));
  }
  Matrix<Scalar> c(a.rows(), b.cols());
  c.noalias() = a * b;
  return c;
}

template <typename Scalar>
struct MatmulGrads {
  Matrix<Scalar> da;
  Matrix<Scalar> db;
};

/// Given c = a b and dL/dc, returns dL/da = dc b^T and dL/db = a^T dc.
template <typename Scalar>
MatmulGrads<Scalar> matmul_backward(const Eigen::Ref<const Matrix<Scalar>>& a,
                                    const Eigen::Ref<const Matrix<Scalar>>& b,
                                    const Eigen::Ref<const Matrix<Scalar>>& dc) {
  if (dc.rows() != a.rows() || dc.cols() != b.cols()) {
    throw ShapeError("matmul_backward: upstream gradient " + shape_string(dc.rows(), dc.cols()) +
                     " does not match product " + shape_string(a.rows(), b.cols()));
  }
  MatmulGrads<Scalar> g;
  g.da.noalias() = dc * b.transpose();
  g.db.noalias() = a.transpose() * dc;
  return g;
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects rank-2 operands, got " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  return Tensor<Scalar>::from_matrix(matmul<Scalar>(a.matrix(), b.matrix()));
}

/// Adds `bias` to every row of `x`; the only broadcast in the library.
template <typename Scalar>
void add_bias_rows(Eigen::Ref<Matrix<Scalar>> x, const Eigen::Ref<const RowVector<Scalar>>& bias) {
  if (x.cols() != bias.cols()) {
    throw ShapeError("bias of width " + std::to_string(bias.cols()) + " added to " +
                     shape_string(x.rows(), x.cols()));
  }
  x.rowwise() += bias;
}

/// y = x w + b for row-vector inputs.
template <typename Scalar>
Matrix<Scalar> affine(const Eigen::Ref<const Matrix<Scalar>>& x,
                      const Eigen::Ref<const Matrix<Scalar>>& w,
                      const Eigen::Ref<const RowVector<Scalar>>& b) {
  Matrix<Scalar> y = matmul<Scalar>(x, w);
  add_bias_rows<Scalar>(y, b);
  return y;
}

// ---------------------------------------------------------------------------
// layer_norm (population variance, per row)

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> normalized;  // (x - mean) * inv_std
  Vector<Scalar> inv_std;
};

template <typename Scalar>
Matrix<Scalar> layer_norm(const Eigen::Ref<const Matrix<Scalar>>& x,
                          const Eigen::Ref<const RowVector<Scalar>>& gamma,
                          const Eigen::Ref<const RowVector<Scalar>>& beta, Scalar eps,
                          LayerNormCache<Scalar>* cache = nullptr) {
  const Index d = x.cols();
  if (d == 0 || x.rows() == 0) throw ShapeError("layer_norm: empty input");
  if (gamma.cols() != d || beta.cols() != d) {
    throw ShapeError("layer_norm: gamma/beta width " + std::to_string(gamma.cols()) + "/" +
                     std::to_string(beta.cols()) + " vs input " + shape_string(x.rows(), d));
  }
  if (!(eps >= Scalar(0))) throw ParameterError("layer_norm: eps must be non-negative");

  Matrix<Scalar> normalized(x.rows(), d);
  Vector<Scalar> inv_std(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).eval();
    const Scalar var = centered.square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    normalized.row(r) = centered * inv_std(r);
  }
  if (!inv_std.allFinite()) throw NumericError("layer_norm: zero variance with eps = 0");

  Matrix<Scalar> y = (normalized.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename Scalar>
struct LayerNormGrads {
  Matrix<Scalar> dx;
  RowVector<Scalar> dgamma;
  RowVector<Scalar> dbeta;
};

template <typename Scalar>
LayerNormGrads<Scalar> layer_norm_backward(const Eigen::Ref<const Matrix<Scalar>>& dy,
                                           const Eigen::Ref<const RowVector<Scalar>>& gamma,
                                           const LayerNormCache<Scalar>& cache) {
  const auto& xhat = cache.normalized;
  LayerNormGrads<Scalar> g;
  g.dgamma = (dy.array() * xhat.array()).colwise().sum();
  g.dbeta = dy.colwise().sum();
  const Matrix<Scalar> dxhat = dy.array().rowwise() * gamma.array();
  g.dx.resize(dy.rows(), dy.cols());
  for (Index r = 0; r < dy.rows(); ++r) {
    const Scalar mean_d = dxhat.row(r).mean();
    const Scalar mean_dx = (dxhat.row(r).array() * xhat.row(r).array()).mean();
    g.dx.row(r) = cache.inv_std(r) *
                  (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
  }
  return g;
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, Scalar eps) {
  if (x.size() == 0) throw ShapeError("layer_norm: empty input");
  Tensor<Scalar> y(x.shape());
  y.matrix() = layer_norm<Scalar>(x.matrix(), gamma.matrix(), beta.matrix(), eps);
  return y;
}

// ---------------------------------------------------------------------------
// softmax

/// Row-wise softmax. Where `key_mask` is given, entries with mask 0 receive
/// weight exactly 0 and are excluded from the normaliser; at least one entry
/// per row must be unmasked.
template <typename Scalar>
Matrix<Scalar> softmax_rows(const Eigen::Ref<const Matrix<Scalar>>& x,
                            const RowVector<Scalar>* key_mask = nullptr) {
  if (x.cols() == 0) throw ShapeError("softmax: empty input");
  if (key_mask && key_mask->cols() != x.cols()) {
    throw ShapeError("softmax: mask width " + std::to_string(key_mask->cols()) + " vs " +
                     shape_string(x.rows(), x.cols()));
  }
  Matrix<Scalar> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    Scalar max_v = -std::numeric_limits<Scalar>::infinity();
    for (Index c = 0; c < x.cols(); ++c) {
      if (!key_mask || (*key_mask)(c) != Scalar(0)) max_v = std::max(max_v, x(r, c));
    }
    if (!std::isfinite(max_v)) throw ShapeError("softmax: every position masked");
    Scalar total = 0;
    for (Index c = 0; c < x.cols(); ++c) {
      if (key_mask && (*key_mask)(c) == Scalar(0)) {
        y(r, c) = Scalar(0);
      } else {
        y(r, c) = std::exp(x(r, c) - max_v);
        total += y(r, c);
      }
    }
    y.row(r) /= total;
  }
  return y;
}

/// dL/dx = y * (dy - <dy, y>) per row; masked entries have y = 0 and get 0.
template <typename Scalar>
Matrix<Scalar> softmax_rows_backward(const Eigen::Ref<const Matrix<Scalar>>& y,
                                     const Eigen::Ref<const Matrix<Scalar>>& dy) {
  const Vector<Scalar> dots = (y.array() * dy.array()).rowwise().sum();
  return y.array() * (dy.array().colwise() - dots.array());
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x) {
  if (x.size() == 0) throw ShapeError("softmax: empty input");
  Tensor<Scalar> y(x.shape());
  y.matrix() = softmax_rows<Scalar>(x.matrix());
  return y;
}

// ---------------------------------------------------------------------------
// elementwise activations

template <std::floating_point Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// log(1 + e^x) without overflow.
template <std::floating_point Scalar>
Scalar softplus(Scalar x) {
  return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <std::floating_point Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
}

template <std::floating_point Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<Scalar> /
                     std::numbers::sqrt2_v<Scalar>;
  return cdf + x * pdf;
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.cwiseMax(Scalar(0));
}

template <typename Derived>
auto gelu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return gelu(v); });
}

template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return sigmoid(v); });
}

template <typename Derived>
auto tanh(const Eigen::MatrixBase<Derived>& x) {
  return x.array().tanh().matrix();
}

// Backward passes take the forward input (relu, gelu) or output (sigmoid,
// tanh), whichever the derivative is cheapest in.

template <typename Scalar>
Matrix<Scalar> relu_backward(const Eigen::Ref<const Matrix<Scalar>>& input,
                             const Eigen::Ref<const Matrix<Scalar>>& dy) {
  return (input.array() > Scalar(0)).select(dy.array(), Scalar(0)).matrix();
}

template <typename Scalar>
Matrix<Scalar> gelu_backward(const Eigen::Ref<const Matrix<Scalar>>& input,
                             const Eigen::Ref<const Matrix<Scalar>>& dy) {
  return dy.array() * input.unaryExpr([](Scalar v) { return gelu_derivative(v); }).array();
}

template <typename Scalar>
Matrix<Scalar> sigmoid_backward(const Eigen::Ref<const Matrix<Scalar>>& output,
                                const Eigen::Ref<const Matrix<Scalar>>& dy) {
  return dy.array() * output.array() * (Scalar(1) - output.array());
}

template <typename Scalar>
Matrix<Scalar> tanh_backward(const Eigen::Ref<const Matrix<Scalar>>& output,
                             const Eigen::Ref<const Matrix<Scalar>>& dy) {
  return dy.array() * (Scalar(1) - output.array().square());
}

template <typename Scalar, typename Fn>
Tensor<Scalar> map_tensor(const Tensor<Scalar>& x, Fn fn) {
  Tensor<Scalar> y(x.shape());
  y.values() = x.values().unaryExpr(fn);
  return y;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  return map_tensor(x, [](Scalar v) { return std::max(v, Scalar(0)); });
}
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  return map_tensor(x, [](Scalar v) { return gelu(v); });
}
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  return map_tensor(x, [](Scalar v) { return sigmoid(v); });
}
template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& x) {
  return map_tensor(x, [](Scalar v) { return std::tanh(v); });
}

// ---------------------------------------------------------------------------
// dropout

inline void check_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
}

/// Inverted-dropout scale mask: each entry is 0 with probability `rate`,
/// otherwise 1 / (1 - rate). Entries are drawn in row-major order.
template <typename Scalar>
Matrix<Scalar> dropout_mask(Index rows, Index cols, double rate, RngStream& rng) {
  check_dropout_rate(rate);
  const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
  Matrix<Scalar> mask(rows, cols);
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < rate ? Scalar(0) : keep_scale;
  }
  return mask;
}

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, Mode mode, RngStream& rng) {
  check_dropout_rate(rate);
  if (mode == Mode::Infer || rate == 0.0) return x;
  Tensor<Scalar> y(x.shape());
  const Matrix<Scalar> mask = dropout_mask<Scalar>(1, x.size(), rate, rng);
  y.values() = x.values().cwiseProduct(mask.transpose());
  return y;
}

}  // namespace memeclf
