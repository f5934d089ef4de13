#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace scpc::autodiff {

// Dense row-major 64-bit float tensor. Rank 1 and 2 are supported; rank-1
// tensors behave as 1 x n rows wherever a matrix view is needed.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::size_t rows, std::size_t cols);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const {
    return shape_.size() == 2 ? shape_[1] : (shape_.empty() ? 0 : shape_[0]);
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool is_scalar() const { return numel() == 1; }
  double scalar_value() const;

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double value);
  bool all_finite() const;
  std::string shape_string() const;  // e.g. "[4x3]"

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// C = A * B, plain triple loops with fixed iteration order.
Tensor matmul_nn(const Tensor& a, const Tensor& b);
// C = A * B^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// C = A^T * B
Tensor matmul_tn(const Tensor& a, const Tensor& b);

}  // namespace scpc::autodiff
