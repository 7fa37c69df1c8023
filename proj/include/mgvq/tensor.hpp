#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/StdVector>

namespace mgvq {

using Index = std::ptrdiff_t;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
// Aligned to Eigen's widest packet so vectorized reductions follow the same
// path, and give bit-identical results, wherever the buffer lands.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

// Dense row-major array of doubles. Rank is the length of the shape; a
// rank-0 tensor is a scalar with one element.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<Index> shape, double fill = 0.0);
  Tensor(std::vector<Index> shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor matrix(Index rows, Index cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  const std::vector<Index>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // Rows/cols of the rank-2 view: first axis by the product of the rest.
  Index rows() const;
  Index cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  Buffer& storage() { return data_; }
  const Buffer& storage() const { return data_; }

  double& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }
  double& at(Index r, Index c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
  double at(Index r, Index c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }
  double item() const;

  MatrixMap mat() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap mat() const { return ConstMatrixMap(data_.data(), rows(), cols()); }

  void fill(double v);
  Tensor reshaped(std::vector<Index> shape) const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_string() const;

 private:
  std::vector<Index> shape_;
  Buffer data_;
};

}  // namespace mgvq
