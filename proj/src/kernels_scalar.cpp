#include "diprl/kernels.hpp"

namespace diprl::kernels {
namespace {

double s_dot(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double s_sum(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double s_max(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) {
    if (x[i] > m) m = x[i];
  }
  return m;
}

void s_axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void s_scale(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a * x[i];
}

void s_add(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void s_sub(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}

void s_mul(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void s_div(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] / y[i];
}

void s_gemv(const double* a, std::size_t rows, std::size_t cols,
            const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = s_dot(a + r * cols, x, cols);
}

void s_gemv_t(const double* a, std::size_t rows, std::size_t cols,
              const double* x, double* y) {
  for (std::size_t c = 0; c < cols; ++c) y[c] = 0.0;
  for (std::size_t r = 0; r < rows; ++r) s_axpy(x[r], a + r * cols, y, cols);
}

void s_ger(double alpha, const double* x, const double* y, double* a,
           std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    s_axpy(alpha * x[r], y, a + r * cols, cols);
  }
}

}  // namespace

const Backend& scalar_backend() {
  static const Backend b{
      "scalar", s_dot, s_sum, s_max,  s_axpy,   s_scale, s_add,
      s_sub,    s_mul, s_div, s_gemv, s_gemv_t, s_ger,
  };
  return b;
}

}  // namespace diprl::kernels
