#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nfr {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Axis extents of a dense tensor. All extents are >= 1; a default-constructed
/// Shape (rank 0) marks an absent tensor, e.g. the weights of a pooling layer.
struct Shape {
  std::vector<int> dims;

  Shape() = default;
  Shape(std::initializer_list<int> d) : dims(d) {}
  explicit Shape(std::vector<int> d) : dims(std::move(d)) {}

  int rank() const { return static_cast<int>(dims.size()); }

  std::int64_t count() const {
    if (dims.empty()) return 0;
    std::int64_t n = 1;
    for (int d : dims) n *= d;
    return n;
  }

  bool valid() const {
    if (dims.empty()) return false;
    for (int d : dims) {
      if (d < 1) return false;
    }
    return true;
  }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims[i]);
    }
    return s + ")";
  }
};

/// Dense n-dimensional array of 64-bit reals in row-major order. Immutable by
/// convention once built: operations return fresh tensors.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape) {
    require_valid(shape);
    Tensor t;
    t.shape_ = shape;
    t.data_ = Vec::Zero(shape.count());
    return t;
  }

  static Tensor constant(const Shape& shape, double value) {
    require_valid(shape);
    Tensor t;
    t.shape_ = shape;
    t.data_ = Vec::Constant(shape.count(), value);
    return t;
  }

  /// Builds from a flat row-major buffer; rejects count mismatch and non-finite
  /// entries.
  static Tensor from_flat(Shape shape, Vec data) {
    require_valid(shape);
    if (shape.count() != data.size()) {
      throw std::invalid_argument("tensor: data length " +
                                  std::to_string(data.size()) +
                                  " does not match shape " + shape.str());
    }
    if (!data.allFinite()) {
      throw std::invalid_argument("tensor: non-finite entry in shape " +
                                  shape.str());
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  static Tensor vector(std::initializer_list<double> values) {
    Vec v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) v[i++] = x;
    return from_flat(Shape{static_cast<int>(values.size())}, std::move(v));
  }

  bool empty() const { return shape_.rank() == 0; }
  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return data_.size(); }

  const Vec& flat() const { return data_; }
  Vec& flat() { return data_; }

  double operator[](std::int64_t i) const { return data_[i]; }
  double& operator[](std::int64_t i) { return data_[i]; }

  /// Rank-2 view: rows = dims[0], cols = dims[1]. The row-major buffer of an
  /// (r, c) tensor is exactly the column-major buffer of its (c, r) transpose,
  /// so `transposed_view` costs nothing and is what the backprop kernels use.
  Eigen::Map<const Mat> transposed_view() const {
    require_rank2();
    return Eigen::Map<const Mat>(data_.data(), shape_.dims[1], shape_.dims[0]);
  }

  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
  matrix_view() const {
    require_rank2();
    return {data_.data(), shape_.dims[0], shape_.dims[1]};
  }

  Tensor reshaped(const Shape& shape) const {
    if (shape.count() != size()) {
      throw std::invalid_argument("tensor: cannot reshape " + shape_.str() +
                                  " to " + shape.str());
    }
    Tensor t;
    t.shape_ = shape;
    t.data_ = data_;
    return t;
  }

  bool bit_equal(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    return std::memcmp(data_.data(), other.data_.data(),
                       sizeof(double) * data_.size()) == 0;
  }

 private:
  static void require_valid(const Shape& shape) {
    if (!shape.valid()) {
      throw std::invalid_argument("tensor: invalid shape " + shape.str());
    }
  }
  void require_rank2() const {
    if (shape_.rank() != 2) {
      throw std::invalid_argument("tensor: matrix view needs rank 2, have " +
                                  shape_.str());
    }
  }

  Shape shape_;
  Vec data_;
};

inline double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("dot: element counts differ, " +
                                a.shape().str() + " vs " + b.shape().str());
  }
  return a.flat().dot(b.flat());
}

inline double norm2(const Tensor& a) { return a.flat().norm(); }

}  // namespace nfr
