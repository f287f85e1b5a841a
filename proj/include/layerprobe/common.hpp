#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace layerprobe {

/// Every failure the toolkit reports is an Error carrying a human-readable message.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A non-finite value appeared in training arithmetic (divergence rather than bad input).
class NumericalError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(message);
}

/// Dense row-major matrix. Rows are time frames throughout the toolkit.
template <typename Real>
class Matrix {
 public:
  using value_type = Real;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<Real> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, "matrix data size does not match shape");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }

  bool same_shape(const Matrix& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

template <typename To, typename From>
Matrix<To> matrix_cast(const Matrix<From>& m) {
  Matrix<To> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.values()[i] = static_cast<To>(m.values()[i]);
  return out;
}

/// An n-dimensional f32 tensor as stored in model containers.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> values;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> s, std::vector<float> v) : shape(std::move(s)), values(std::move(v)) {}

  static Tensor from_matrix(const MatrixF& m) {
    return Tensor({static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())},
                  std::vector<float>(m.values().begin(), m.values().end()));
  }
  static Tensor vector(std::vector<float> v) {
    auto n = static_cast<std::int64_t>(v.size());
    return Tensor({n}, std::move(v));
  }

  std::int64_t element_count() const {
    std::int64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
  MatrixF to_matrix() const {
    require(shape.size() == 2, "tensor is not two-dimensional");
    return MatrixF(static_cast<std::size_t>(shape[0]), static_cast<std::size_t>(shape[1]), values);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

using TensorMap = std::map<std::string, Tensor>;

std::string shape_string(std::span<const std::int64_t> shape);

}  // namespace layerprobe
