#pragma once

#include <Eigen/Core>

#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "memeclf/errors.hpp"

namespace memeclf {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using MatrixMap = Eigen::Map<Matrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const Matrix<Scalar>>;

using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

inline std::string shape_string(Index rows, Index cols) {
  return shape_string(Shape{rows, cols});
}

/// Dense row-major array with a shape and an optional same-shape gradient.
///
/// The values live in a flat Eigen vector; `matrix()` views them as a 2-D
/// matrix whose columns are the last axis and whose rows are the product of
/// all leading axes (a rank-1 tensor is a single row).
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_extents();
    values_ = Vector<Scalar>::Zero(shape_size(shape_));
  }

  Tensor(Shape shape, Vector<Scalar> values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_extents();
    if (values_.size() != shape_size(shape_)) {
      throw ShapeError("tensor of shape " + shape_string(shape_) + " given " +
                       std::to_string(values_.size()) + " values");
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.values_.setConstant(value);
    return t;
  }

  static Tensor ones(Shape shape) { return constant(std::move(shape), Scalar(1)); }

  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    Tensor t(Shape{m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }

  static Tensor from_values(Shape shape, std::initializer_list<Scalar> values) {
    Vector<Scalar> v(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar x : values) v(i++) = x;
    return Tensor(std::move(shape), std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index size() const noexcept { return values_.size(); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

  Vector<Scalar>& values() noexcept { return values_; }
  const Vector<Scalar>& values() const noexcept { return values_; }
  Scalar* data() noexcept { return values_.data(); }
  const Scalar* data() const noexcept { return values_.data(); }

  Scalar& operator[](Index i) { return values_(i); }
  Scalar operator[](Index i) const { return values_(i); }

  Index rows() const noexcept { return shape_.empty() ? 0 : values_.size() / shape_.back(); }
  Index cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  MatrixMap<Scalar> matrix() { return MatrixMap<Scalar>(values_.data(), rows(), cols()); }
  ConstMatrixMap<Scalar> matrix() const {
    return ConstMatrixMap<Scalar>(values_.data(), rows(), cols());
  }

  /// Row `i` of the leading-axis slices, viewed as a [rest...] matrix.
  MatrixMap<Scalar> slice(Index i, Index rows, Index cols) {
    return MatrixMap<Scalar>(values_.data() + i * rows * cols, rows, cols);
  }
  ConstMatrixMap<Scalar> slice(Index i, Index rows, Index cols) const {
    return ConstMatrixMap<Scalar>(values_.data() + i * rows * cols, rows, cols);
  }

  bool has_grad() const noexcept { return grad_.has_value(); }
  Vector<Scalar>& grad() {
    if (!grad_) grad_ = Vector<Scalar>::Zero(values_.size());
    return *grad_;
  }
  const std::optional<Vector<Scalar>>& grad_opt() const noexcept { return grad_; }
  void zero_grad() { grad().setZero(); }
  void clear_grad() { grad_.reset(); }

  bool all_finite() const { return values_.allFinite(); }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, values_.template cast<To>());
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_extents() const {
    for (Index e : shape_) {
      if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_string(shape_));
    }
  }

  Shape shape_;
  Vector<Scalar> values_;
  std::optional<Vector<Scalar>> grad_;
};

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> tensor;
};

template <typename Scalar>
using NamedTensors = std::vector<NamedTensor<Scalar>>;

}  // namespace memeclf
