#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace retro {

using Vector = std::vector<double>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-owning row-major views. Encoder weights live in one flat buffer and are
// addressed through these.
struct MatrixView {
  double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) const { return {data + r * cols, cols}; }
};

struct ConstMatrixView {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  ConstMatrixView() = default;
  ConstMatrixView(const double* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {}
  ConstMatrixView(MatrixView v) : data(v.data), rows(v.rows), cols(v.cols) {}

  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data + r * cols, cols}; }
};

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  MatrixView view() { return {data_.data(), rows_, cols_}; }
  ConstMatrixView view() const { return {data_.data(), rows_, cols_}; }

  void fill(double v);
  DenseMatrix transpose() const;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);
void scale(std::span<double> v, double a);
bool all_finite(std::span<const double> v);
std::size_t argmax(std::span<const double> v);

Vector matvec(const DenseMatrix& m, std::span<const double> v);
Vector matvec(ConstMatrixView m, std::span<const double> v);

// c (+)= a * b, with a: m x k, b: k x n, c: m x n.
void gemm_nn(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate);
// c (+)= a^T * b, with a: k x m, b: k x n, c: m x n.
void gemm_tn(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate);
// c (+)= a * b^T, with a: m x k, b: n x k, c: m x n.
void gemm_nt(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate);

Vector stable_softmax(std::span<const double> v);

inline constexpr double kCrossEntropyFloor = 1e-12;

// -ln(max(probs[gold], 1e-12))
double cross_entropy(std::span<const double> probs, std::size_t gold);

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central differences, one coordinate at a time.
Vector finite_diff_grad(const ScalarFunction& f, std::span<const double> theta, double eps = 1e-5);

// Gaussian elimination with partial pivoting; throws NumericError on a singular system.
Vector solve_linear(DenseMatrix a, std::span<const double> b);

void check_same_dim(std::size_t a, std::size_t b, const std::string& what);

}  // namespace retro
