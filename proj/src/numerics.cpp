#include "retro/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace retro {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("DenseMatrix: data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void DenseMatrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

DenseMatrix DenseMatrix::transpose() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

void check_same_dim(std::size_t a, std::size_t b, const std::string& what) {
  if (a != b) {
    throw DimensionError(what + ": dimension mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_same_dim(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void axpy(double a, std::span<const double> x, std::span<double> y) {
  check_same_dim(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

void scale(std::span<double> v, double a) {
  for (double& x : v) x *= a;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw DimensionError("argmax: empty input");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

Vector matvec(ConstMatrixView m, std::span<const double> v) {
  check_same_dim(m.cols, v.size(), "matvec");
  Vector out(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.data + r * m.cols;
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) s += row[c] * v[c];
    out[r] = s;
  }
  return out;
}

Vector matvec(const DenseMatrix& m, std::span<const double> v) { return matvec(m.view(), v); }

void gemm_nn(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate) {
  check_same_dim(a.cols, b.rows, "gemm_nn inner");
  check_same_dim(c.rows, a.rows, "gemm_nn rows");
  check_same_dim(c.cols, b.cols, "gemm_nn cols");
  const std::size_t n = b.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* crow = c.data + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    const double* arow = a.data + i * a.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.data + k * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

void gemm_tn(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate) {
  check_same_dim(a.rows, b.rows, "gemm_tn inner");
  check_same_dim(c.rows, a.cols, "gemm_tn rows");
  check_same_dim(c.cols, b.cols, "gemm_tn cols");
  const std::size_t n = b.cols;
  if (!accumulate) std::fill(c.data, c.data + c.rows * c.cols, 0.0);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = a.data + k * a.cols;
    const double* brow = b.data + k * n;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = c.data + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
    }
  }
}

void gemm_nt(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate) {
  check_same_dim(a.cols, b.cols, "gemm_nt inner");
  check_same_dim(c.rows, a.rows, "gemm_nt rows");
  check_same_dim(c.cols, b.rows, "gemm_nt cols");
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.data + j * b.cols;
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      if (accumulate)
        c(i, j) += s;
      else
        c(i, j) = s;
    }
  }
}

Vector stable_softmax(std::span<const double> v) {
  if (v.empty()) throw DimensionError("stable_softmax: empty input");
  const double mx = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

double cross_entropy(std::span<const double> probs, std::size_t gold) {
  if (gold >= probs.size()) {
    throw DimensionError("cross_entropy: gold class " + std::to_string(gold) +
                         " out of range for " + std::to_string(probs.size()) + " classes");
  }
  return -std::log(std::max(probs[gold], kCrossEntropyFloor));
}

Vector finite_diff_grad(const ScalarFunction& f, std::span<const double> theta, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  Vector point(theta.begin(), theta.end());
  Vector grad(theta.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + eps;
    const double up = f(point);
    point[i] = orig - eps;
    const double down = f(point);
    point[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " +
                         std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

Vector solve_linear(DenseMatrix a, std::span<const double> b) {
  const std::size_t n = a.rows();
  check_same_dim(a.cols(), n, "solve_linear (square)");
  check_same_dim(b.size(), n, "solve_linear rhs");
  Vector x(b.begin(), b.end());
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    if (a(pivot, col) == 0.0) throw NumericError("solve_linear: singular matrix");
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(pivot, c));
      std::swap(x[col], x[pivot]);
    }
    const double diag = a(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = a(r, col) / diag;
      if (factor == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= factor * a(col, c);
      x[r] -= factor * x[col];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = x[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a(i, c) * x[c];
    x[i] = s / a(i, i);
  }
  if (!all_finite(x)) throw NumericError("solve_linear: non-finite solution");
  return x;
}

}  // namespace retro
