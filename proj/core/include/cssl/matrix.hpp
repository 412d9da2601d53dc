#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cssl {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  void fill(double v);

  // Frobenius norm and inner product <A, B> = sum_ij A_ij B_ij.
  double frobenius_norm() const;
  double dot(const Matrix& other) const;

  // this += alpha * other
  void axpy(double alpha, const Matrix& other);
  // this += alpha * u v^T
  void add_outer(double alpha, std::span<const double> u, std::span<const double> v);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// y = A x
std::vector<double> matvec(const Matrix& a, std::span<const double> x);
// y = A^T x
std::vector<double> matvec_transposed(const Matrix& a, std::span<const double> x);
// u^T A v
double bilinear(std::span<const double> u, const Matrix& a, std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double squared_norm(std::span<const double> a);

}  // namespace cssl
