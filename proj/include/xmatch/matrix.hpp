#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xmatch/errors.hpp"

namespace xmatch {

// Guard for every normalization denominator in the library.
inline constexpr double kNormEps = 1e-8;

// Dense row-major matrix of 64-bit reals. Values are immutable once an
// operation has produced the matrix; concurrent reads are safe.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);  // zero-filled
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::vector<double> values);
  static Matrix column_vector(std::vector<double> values);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;

  // First `count` rows (count may not exceed rows()).
  Matrix top_rows(std::size_t count) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
Matrix relu(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> x);

// x / max(||x||, eps): unit norm whenever ||x|| >= eps, zero stays zero.
std::vector<double> l2_normalize(std::span<const double> x, double eps = kNormEps);

// exp(lambda*x_i) / sum_j exp(lambda*x_j), computed with max subtraction.
std::vector<double> softmax_scaled(std::span<const double> x, double lambda);

// Cosine with eps-guarded norms; in [-1, 1] up to roundoff.
double cosine(std::span<const double> a, std::span<const double> b, double eps = kNormEps);

// Logistic function, computed without overflow for large |t|.
double sigmoid(double t);

}  // namespace xmatch
