#pragma once

// Direct reference computations used as test oracles. Deliberately naive and
// independent of the library code paths they check.

#include <cmath>
#include <vector>

#include "icl/taskgen/prompt.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix rows_of(const icl::tasks::PromptMatrix& a) {
  Matrix m(a.rows(), std::vector<double>(a.cols()));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m[i][j] = a.row(i)[j];
  return m;
}

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Matrix transposed(const Matrix& a) {
  Matrix t(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

// x_N^T X^T y, summing over all rows.
inline double gd_closed_form(const icl::tasks::PromptMatrix& a) {
  const std::size_t n = a.rows();
  const std::size_t d = a.dim();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double g = 0.0;
    for (std::size_t j = 0; j < d; ++j) g += a.row(n - 1)[j] * a.row(i)[j];
    s += g * a.row(i)[d];
  }
  return s;
}

// Kernel smoother sum_i K(x_N, x_i) y_i / sum_i K(x_N, x_i) over context rows,
// returning the full smoothed row [sum w_i x_i, sum w_i y_i].
template <class K>
std::vector<double> smoothed_row(const icl::tasks::PromptMatrix& a, K kernel) {
  const std::size_t n = a.rows();
  std::vector<double> k(n - 1);
  double den = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    k[i] = kernel(a.x(n - 1), a.x(i));
    den += k[i];
  }
  std::vector<double> out(a.cols(), 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += k[i] / den * a.row(i)[j];
  return out;
}

inline double exp_kernel(std::span<const double> x, std::span<const double> z) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) s += x[j] * z[j];
  return std::exp(s);
}

inline double hilbert(std::span<const double> x, std::span<const double> z) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) s += (x[j] - z[j]) * (x[j] - z[j]);
  return std::pow(s, -0.5 * static_cast<double>(x.size()));
}

inline double linear_kernel(std::span<const double> x, std::span<const double> z) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) s += x[j] * z[j];
  return s;
}

// Solves M z = r by Gaussian elimination with partial pivoting.
inline std::vector<double> solve(Matrix m, std::vector<double> r) {
  const std::size_t n = m.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t i = c + 1; i < n; ++i)
      if (std::abs(m[i][c]) > std::abs(m[p][c])) p = i;
    std::swap(m[c], m[p]);
    std::swap(r[c], r[p]);
    for (std::size_t i = c + 1; i < n; ++i) {
      const double f = m[i][c] / m[c][c];
      for (std::size_t j = c; j < n; ++j) m[i][j] -= f * m[c][j];
      r[i] -= f * r[c];
    }
  }
  std::vector<double> z(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = r[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= m[i][j] * z[j];
    z[i] = s / m[i][i];
  }
  return z;
}

}  // namespace oracle
