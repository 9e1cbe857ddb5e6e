#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ulab/error.hpp"

namespace ulab {

// Dense row-major tensor. Rank 1 and rank 2 are the working ranks of every
// operation; higher ranks are storable (checkpoints) but not computable.
template <typename Scalar>
class BasicTensor {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using Vector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

  BasicTensor() = default;

  explicit BasicTensor(std::vector<int> shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)) {
    check_shape();
    data_.assign(extent_product(shape_), fill);
  }

  BasicTensor(std::vector<int> shape, std::vector<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    require(data_.size() == extent_product(shape_), "shape_mismatch",
            "tensor data length does not match shape " + shape_string());
  }

  static BasicTensor zeros(int rows, int cols) { return BasicTensor({rows, cols}); }
  static BasicTensor scalar(Scalar v) { return BasicTensor({1}, std::vector<Scalar>{v}); }

  static BasicTensor from_matrix(const Matrix& m) {
    BasicTensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    t.mat() = m;
    return t;
  }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_scalar() const noexcept { return data_.size() == 1; }

  // Rank 1 tensors are viewed as a single row.
  int rows() const { return rank() == 1 ? 1 : shape_.at(0); }
  int cols() const { return shape_.empty() ? 0 : shape_.back(); }

  std::span<Scalar> data() noexcept { return data_; }
  std::span<const Scalar> data() const noexcept { return data_; }
  const std::vector<Scalar>& storage() const noexcept { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }
  Scalar& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  Scalar at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  Scalar item() const {
    require(is_scalar(), "not_scalar", "item() on tensor of shape " + shape_string());
    return data_[0];
  }

  MatrixMap mat() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap mat() const { return ConstMatrixMap(data_.data(), rows(), cols()); }
  ArrayMap arr() { return ArrayMap(data_.data(), static_cast<Eigen::Index>(data_.size())); }
  ConstArrayMap arr() const {
    return ConstArrayMap(data_.data(), static_cast<Eigen::Index>(data_.size()));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename To>
  BasicTensor<To> cast() const {
    std::vector<To> out(data_.begin(), data_.end());
    return BasicTensor<To>(shape_, std::move(out));
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  bool same_shape(const BasicTensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t extent_product(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t acc, int e) { return acc * static_cast<std::size_t>(e); });
  }

  void check_shape() const {
    require(!shape_.empty(), "shape_mismatch", "tensor shape must have at least one extent");
    for (int e : shape_) {
      require(e > 0, "shape_mismatch", "tensor extents must be positive, got " + shape_string());
    }
  }

  std::vector<int> shape_;
  std::vector<Scalar> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Euclidean norm accumulated in double.
template <typename Scalar>
double l2_norm(const BasicTensor<Scalar>& t) {
  double acc = 0.0;
  for (Scalar v : t.data()) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

}  // namespace ulab
