#include "core/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace scpc::autodiff {

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  if (shape_.empty() || shape_.size() > 2)
    throw std::invalid_argument("tensor rank must be 1 or 2");
  std::size_t n = 1;
  for (std::size_t d : shape_) {
    if (d == 0) throw std::invalid_argument("tensor dimension must be > 0");
    n *= d;
  }
  data_.assign(n, 0.0);
}

Tensor::Tensor(std::size_t rows, std::size_t cols)
    : Tensor(std::vector<std::size_t>{rows, cols}) {}

Tensor Tensor::scalar(double value) {
  Tensor t(1, 1);
  t.data_[0] = value;
  return t;
}

Tensor Tensor::vector(std::vector<double> values) {
  Tensor t(std::vector<std::size_t>{values.size()});
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("from_rows: no rows");
  Tensor t(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size())
      throw std::invalid_argument("from_rows: ragged rows");
    for (std::size_t c = 0; c < rows[r].size(); ++c) t.at(r, c) = rows[r][c];
  }
  return t;
}

double Tensor::scalar_value() const {
  if (!is_scalar())
    throw std::invalid_argument("scalar_value on tensor " + shape_string());
  return data_[0];
}

void Tensor::fill(double value) {
  for (double& v : data_) v = value;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_string() const {
  std::string out = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape_[i]);
  }
  out += "]";
  return out;
}

namespace {

void require_matmul_shapes(const Tensor& a, const Tensor& b,
                           std::size_t inner_a, std::size_t inner_b,
                           const char* what) {
  if (inner_a != inner_b) {
    throw std::invalid_argument(std::string(what) + ": shapes " +
                                a.shape_string() + " and " + b.shape_string() +
                                " do not conform");
  }
}

}  // namespace

Tensor matmul_nn(const Tensor& a, const Tensor& b) {
  require_matmul_shapes(a, b, a.cols(), b.rows(), "matmul");
  Tensor c(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) c.at(i, j) += av * b.at(p, j);
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matmul_shapes(a, b, a.cols(), b.cols(), "matmul_nt");
  Tensor c(a.rows(), b.rows());
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(j, p);
      c.at(i, j) = acc;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matmul_shapes(a, b, a.rows(), b.rows(), "matmul_tn");
  Tensor c(a.cols(), b.cols());
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      const double av = a.at(p, i);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) c.at(i, j) += av * b.at(p, j);
    }
  }
  return c;
}

}  // namespace scpc::autodiff
