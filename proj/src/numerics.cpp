#include "sagerec/numerics.hpp"

#include <cmath>
#include <cstddef>

#include "sagerec/error.hpp"

namespace sagerec {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw DimensionError("matmul: inner dimensions disagree (" + std::to_string(a.cols) +
                         " vs " + std::to_string(b.rows) + ")");
  }
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out.at(j, i) = m.at(i, j);
  return out;
}

Matrix l2_normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (int i = 0; i < out.rows; ++i) {
    double* r = out.row(i);
    double n = norm2(r, out.cols);
    if (n == 0.0) continue;
    for (int j = 0; j < out.cols; ++j) r[j] /= n;
  }
  return out;
}

bool all_finite(const Matrix& m) {
  for (double v : m.data)
    if (!std::isfinite(v)) return false;
  return true;
}

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a.data(), b.data(), static_cast<int>(a.size()));
}

double norm2(const double* v, int n) { return std::sqrt(dot(v, v, n)); }

double norm2(const std::vector<double>& v) {
  return norm2(v.data(), static_cast<int>(v.size()));
}

AdamState AdamState::for_param(const Matrix& p, double lr) {
  AdamState s;
  s.m = Matrix(p.rows, p.cols);
  s.v = Matrix(p.rows, p.cols);
  s.lr = lr;
  return s;
}

void adam_step(Matrix& param, const Matrix& grad, AdamState& state) {
  if (!param.same_shape(grad) || !param.same_shape(state.m)) {
    throw DimensionError("adam_step: parameter/gradient/state shapes disagree");
  }
  if (!all_finite(grad)) throw ValidationError("adam_step: non-finite gradient");
  state.t += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    const double g = grad.data[i];
    state.m.data[i] = b1 * state.m.data[i] + (1.0 - b1) * g;
    state.v.data[i] = b2 * state.v.data[i] + (1.0 - b2) * g * g;
    const double mhat = state.m.data[i] / corr1;
    const double vhat = state.v.data[i] / corr2;
    param.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

double grad_check(const std::function<double(const std::vector<double>&)>& f,
                  const std::vector<double>& analytic_grad,
                  const std::vector<double>& x, double h) {
  double worst = 0.0;
  std::vector<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    const double fd = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic_grad[i] - fd) / std::max(1.0, std::abs(fd));
    if (err > worst) worst = err;
  }
  return worst;
}

}  // namespace sagerec
