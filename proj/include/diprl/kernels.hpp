#pragma once

#include <cstddef>

// Dense double-precision vector kernels used by the autodiff tape and the
// value network. Two backends: a portable scalar reference and an AVX2+FMA
// variant selected at runtime. Reductions (dot/sum/gemv) may differ between
// backends in the last bits because of re-association; elementwise ops are
// bit-identical.

namespace diprl::kernels {

struct Backend {
  const char* name;

  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*max)(const double* x, std::size_t n);  // n >= 1

  void (*axpy)(double a, const double* x, double* y, std::size_t n);   // y += a*x
  void (*scale)(double a, const double* x, double* y, std::size_t n);  // y  = a*x
  void (*add)(const double* x, const double* y, double* out, std::size_t n);
  void (*sub)(const double* x, const double* y, double* out, std::size_t n);
  void (*mul)(const double* x, const double* y, double* out, std::size_t n);
  void (*div)(const double* x, const double* y, double* out, std::size_t n);

  // y = A x with A row-major (rows x cols)
  void (*gemv)(const double* a, std::size_t rows, std::size_t cols,
               const double* x, double* y);
  // y = A^T x with A row-major (rows x cols); y has length cols
  void (*gemv_t)(const double* a, std::size_t rows, std::size_t cols,
                 const double* x, double* y);
  // A += alpha * x y^T with A row-major (rows x cols)
  void (*ger)(double alpha, const double* x, const double* y, double* a,
              std::size_t rows, std::size_t cols);
};

const Backend& scalar_backend();

// True when the binary carries AVX2 kernels and the CPU can run them.
bool avx2_available();
const Backend& avx2_backend();  // falls back to scalar when unavailable

// Backend used by everything else. Honors set_force_scalar() and the
// DIPRL_FORCE_SCALAR environment variable (checked once at startup).
const Backend& active();
void set_force_scalar(bool force);

}  // namespace diprl::kernels
