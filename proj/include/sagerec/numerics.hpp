#pragma once

#include <functional>
#include <vector>

namespace sagerec {

// Dense row-major matrix of doubles. Desk-scale linear algebra; sparsity
// lives in the graph module, not here.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Matrix& o) const {
    return rows == o.rows && cols == o.cols && data == o.data;
  }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

// Rows with nonzero norm are scaled to unit length; all-zero rows pass
// through unchanged.
Matrix l2_normalize_rows(const Matrix& m);

bool all_finite(const Matrix& m);

double dot(const double* a, const double* b, int n);
double dot(const std::vector<double>& a, const std::vector<double>& b);
double norm2(const double* v, int n);
double norm2(const std::vector<double>& v);

// Per-parameter Adam accumulator.
struct AdamState {
  Matrix m;
  Matrix v;
  long t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_param(const Matrix& p, double lr = 1e-3);
};

// Bias-corrected Adam update, in place. Throws ValidationError on a
// non-finite gradient.
void adam_step(Matrix& param, const Matrix& grad, AdamState& state);

// Max relative error between an analytic gradient and central differences:
// max_i |ga_i - gfd_i| / max(1, |gfd_i|).
double grad_check(const std::function<double(const std::vector<double>&)>& f,
                  const std::vector<double>& analytic_grad,
                  const std::vector<double>& x, double h = 1e-5);

}  // namespace sagerec
