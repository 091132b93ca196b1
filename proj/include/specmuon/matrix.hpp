#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "specmuon/errors.hpp"

namespace specmuon {

/// Dense row-major matrix of doubles.
///
/// Every constructor that accepts external data rejects NaN/Inf. The
/// arithmetic helpers below that can overflow (products, rank-one updates)
/// re-check their result, so a Matrix produced by this library is finite.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (!std::isfinite(fill)) throw DataError("Matrix: non-finite fill value");
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    check_finite("Matrix");
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
      if (row.size() != cols_) throw DimensionError("Matrix: ragged initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
    check_finite("Matrix");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> values) {
    Matrix m(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
    m.check_finite("Matrix::diagonal");
    return m;
  }

  /// Column vector (n x 1).
  static Matrix column(std::span<const double> values) {
    return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t min_dim() const noexcept { return std::min(rows_, cols_); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::vector<double> col(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  void check_finite(const char* where) const {
    if (!all_finite()) throw DataError(std::string(where) + ": non-finite entry");
  }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    check_finite("operator+=");
    return *this;
  }

  Matrix& operator-=(const Matrix& o) {
    require_same_shape(o, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    check_finite("operator-=");
    return *this;
  }

  Matrix& operator*=(double s) {
    for (double& x : data_) x *= s;
    check_finite("operator*=");
    return *this;
  }

  /// this += s * o
  Matrix& axpy(double s, const Matrix& o) {
    require_same_shape(o, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
    check_finite("axpy");
    return *this;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  void require_same_shape(const Matrix& o, const char* where) const {
    if (!same_shape(o)) {
      throw DimensionError(std::string(where) + ": " + std::to_string(rows_) + "x" +
                           std::to_string(cols_) + " vs " + std::to_string(o.rows_) + "x" +
                           std::to_string(o.cols_));
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(Matrix a, double s) { return a *= s; }
inline Matrix operator*(double s, Matrix a) { return a *= s; }

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  out.check_finite("matmul");
  return out;
}

/// a^T b without forming the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("matmul_tn: row counts differ");
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
    }
  }
  out.check_finite("matmul_tn");
  return out;
}

/// a b^T without forming the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: column counts differ");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  }
  out.check_finite("matmul_nt");
  return out;
}

inline double frobenius_inner(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("frobenius_inner: shape mismatch");
  double s = 0.0;
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double frobenius_norm(const Matrix& a) { return std::sqrt(frobenius_inner(a, a)); }

inline double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

/// acc + coeff * u v^T
inline Matrix rank_one_accumulate(Matrix acc, double coeff, std::span<const double> u,
                                  std::span<const double> v) {
  if (u.size() != acc.rows() || v.size() != acc.cols()) {
    throw DimensionError("rank_one_accumulate: vector lengths do not match accumulator");
  }
  if (coeff == 0.0) return acc;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double cu = coeff * u[i];
    for (std::size_t j = 0; j < v.size(); ++j) acc(i, j) += cu * v[j];
  }
  acc.check_finite("rank_one_accumulate");
  return acc;
}

/// u^T a v, i.e. <a, u v^T>_F.
inline double bilinear(std::span<const double> u, const Matrix& a, std::span<const double> v) {
  if (u.size() != a.rows() || v.size() != a.cols()) throw DimensionError("bilinear: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) row += a(i, j) * v[j];
    s += u[i] * row;
  }
  return s;
}

}  // namespace specmuon
