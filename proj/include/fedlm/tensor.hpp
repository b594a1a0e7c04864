// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Row-major dense matrices, views, and the handful of BLAS-2 style
 *         kernels the recurrent model needs.
 */
#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include "fedlm/error.hpp"
#include "fedlm/rng.hpp"

namespace fedlm {

/// Non-owning row-major view. T may be const-qualified.
template <class T> struct MatrixRef {
  T *data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  T &operator()(std::size_t r, std::size_t c) const {
    assert(r < rows && c < cols);
    return data[r * cols + c];
  }
  std::span<T> row(std::size_t r) const { return {data + r * cols, cols}; }
  std::span<T> flat() const { return {data, rows * cols}; }
  std::size_t size() const { return rows * cols; }

  operator MatrixRef<const T>() const
    requires(!std::is_const_v<T>)
  {
    return {data, rows, cols};
  }
};

template <class T> class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T &operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }

  MatrixRef<T> ref() { return {data_.data(), rows_, cols_}; }
  MatrixRef<const T> ref() const { return {data_.data(), rows_, cols_}; }

  bool operator==(const Matrix &) const = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// Glorot-style uniform init: entries i.i.d. on [-s, s] with
/// s = sqrt(6 / (fan_in + fan_out)), fan_in = cols, fan_out = rows.
inline double init_bound(std::size_t rows, std::size_t cols) {
  return std::sqrt(6.0 / static_cast<double>(rows + cols));
}

template <class T>
void fill_uniform(MatrixRef<T> out, std::uint64_t seed) {
  const double s = init_bound(out.rows, out.cols);
  Rng rng(seed);
  for (auto &x : out.flat())
    x = static_cast<T>(rng.uniform(-s, s));
}

template <class T>
Matrix<T> init_uniform(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  require(rows > 0 && cols > 0, "matrix dimensions must be positive");
  Matrix<T> m(rows, cols);
  fill_uniform(m.ref(), seed);
  return m;
}

// ---- kernels --------------------------------------------------------------

/// y += A x
template <class T>
void gemv_acc(MatrixRef<const T> a, std::span<const T> x, std::span<T> y) {
  assert(x.size() == a.cols && y.size() == a.rows);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const T *row = a.data + r * a.cols;
    T acc = T{};
    for (std::size_t c = 0; c < a.cols; ++c)
      acc += row[c] * x[c];
    y[r] += acc;
  }
}

/// y += A^T x
template <class T>
void gemv_t_acc(MatrixRef<const T> a, std::span<const T> x, std::span<T> y) {
  assert(x.size() == a.rows && y.size() == a.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const T *row = a.data + r * a.cols;
    const T xr = x[r];
    for (std::size_t c = 0; c < a.cols; ++c)
      y[c] += row[c] * xr;
  }
}

/// A += u v^T
template <class T>
void outer_acc(MatrixRef<T> a, std::span<const T> u, std::span<const T> v) {
  assert(u.size() == a.rows && v.size() == a.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    T *row = a.data + r * a.cols;
    const T ur = u[r];
    for (std::size_t c = 0; c < a.cols; ++c)
      row[c] += ur * v[c];
  }
}

template <class T> T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

template <class T> bool all_finite(std::span<const T> xs) {
  for (T x : xs)
    if (!std::isfinite(x))
      return false;
  return true;
}

} // namespace fedlm
