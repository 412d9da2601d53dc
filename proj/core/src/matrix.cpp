#include "cssl/matrix.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace cssl {

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Matrix::frobenius_norm() const { return std::sqrt(squared_norm(data_)); }

double Matrix::dot(const Matrix& other) const {
  assert(same_shape(other));
  return cssl::dot(data_, other.data_);
}

void Matrix::axpy(double alpha, const Matrix& other) {
  assert(same_shape(other));
  const double* src = other.data_.data();
  double* dst = data_.data();
  for (std::size_t i = 0; i < data_.size(); ++i) dst[i] += alpha * src[i];
}

void Matrix::add_outer(double alpha, std::span<const double> u, std::span<const double> v) {
  assert(u.size() == rows_ && v.size() == cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    const double a = alpha * u[r];
    if (a == 0.0) continue;
    double* dst = data_.data() + r * cols_;
    for (std::size_t c = 0; c < cols_; ++c) dst[c] += a * v[c];
  }
}

std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
  assert(x.size() == a.cols());
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) y[r] = dot(a.row(r), x);
  return y;
}

std::vector<double> matvec_transposed(const Matrix& a, std::span<const double> x) {
  assert(x.size() == a.rows());
  std::vector<double> y(a.cols(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const auto row = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) y[c] += xr * row[c];
  }
  return y;
}

double bilinear(std::span<const double> u, const Matrix& a, std::span<const double> v) {
  assert(u.size() == a.rows() && v.size() == a.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    if (u[r] == 0.0) continue;
    total += u[r] * dot(a.row(r), v);
  }
  return total;
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

double norm2(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

}  // namespace cssl
