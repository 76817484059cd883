#pragma once

#include <Eigen/Dense>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "robustlens/error.hpp"

namespace robustlens {

using Scalar = double;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

/// Dense real array with shape; flat storage is row-major.
struct Tensor {
  Shape shape;
  Vector data;

  Tensor() = default;
  Tensor(Shape s, Vector d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
      fail(ErrorCode::shape_mismatch, "tensor data length does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    Index n = shape_numel(s);
    return Tensor(std::move(s), Vector::Zero(n));
  }
  static Tensor full(Shape s, Scalar v) {
    Index n = shape_numel(s);
    return Tensor(std::move(s), Vector::Constant(n, v));
  }
  static Tensor scalar(Scalar v) { return Tensor({1}, Vector::Constant(1, v)); }
  static Tensor row(std::initializer_list<Scalar> vs) {
    Vector d(static_cast<Index>(vs.size()));
    Index i = 0;
    for (Scalar v : vs) d[i++] = v;
    return Tensor({d.size()}, d);
  }

  Index size() const { return data.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  Index dim(Index i) const { return shape[static_cast<size_t>(i)]; }

  bool is_scalar() const { return size() == 1; }
  Scalar value() const { return data[0]; }

  bool all_finite() const { return data.allFinite(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  /// Row-major matrix view; requires rank 2.
  Eigen::Map<const RowMatrix> mat() const {
    return Eigen::Map<const RowMatrix>(data.data(), shape[0], shape[1]);
  }
  Eigen::Map<RowMatrix> mat() {
    return Eigen::Map<RowMatrix>(data.data(), shape[0], shape[1]);
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != size())
      fail(ErrorCode::shape_mismatch,
           "reshape " + shape_str(shape) + " -> " + shape_str(s));
    return Tensor(std::move(s), data);
  }
};

}  // namespace robustlens
