#include "diprl/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace diprl::kernels {
namespace {

constexpr std::size_t kLanes = 4;  // doubles per __m256d

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double v_dot(const double* x, const double* y, std::size_t n) {
  std::size_t vec_ub = (n / (2 * kLanes)) * (2 * kLanes);
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  for (std::size_t i = 0; i < vec_ub; i += 2 * kLanes) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + kLanes),
                           _mm256_loadu_pd(y + i + kLanes), acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (std::size_t i = vec_ub; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double v_sum(const double* x, std::size_t n) {
  std::size_t vec_ub = (n / kLanes) * kLanes;
  __m256d acc = _mm256_setzero_pd();
  for (std::size_t i = 0; i < vec_ub; i += kLanes) {
    acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  }
  double s = hsum(acc);
  for (std::size_t i = vec_ub; i < n; ++i) s += x[i];
  return s;
}

double v_max(const double* x, std::size_t n) {
  double m = x[0];
  std::size_t vec_ub = (n / kLanes) * kLanes;
  if (vec_ub >= kLanes) {
    __m256d acc = _mm256_loadu_pd(x);
    for (std::size_t i = kLanes; i < vec_ub; i += kLanes) {
      acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
    }
    __m128d lo = _mm256_castpd256_pd128(acc);
    __m128d hi = _mm256_extractf128_pd(acc, 1);
    lo = _mm_max_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    m = _mm_cvtsd_f64(_mm_max_sd(lo, shuf));
  }
  for (std::size_t i = vec_ub; i < n; ++i) {
    if (x[i] > m) m = x[i];
  }
  return m;
}

void v_axpy(double a, const double* x, double* y, std::size_t n) {
  __m256d av = _mm256_set1_pd(a);
  std::size_t vec_ub = (n / kLanes) * kLanes;
  for (std::size_t i = 0; i < vec_ub; i += kLanes) {
    __m256d r = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(y + i, r);
  }
  for (std::size_t i = vec_ub; i < n; ++i) y[i] += a * x[i];
}

void v_scale(double a, const double* x, double* y, std::size_t n) {
  __m256d av = _mm256_set1_pd(a);
  std::size_t vec_ub = (n / kLanes) * kLanes;
  for (std::size_t i = 0; i < vec_ub; i += kLanes) {
    _mm256_storeu_pd(y + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  }
  for (std::size_t i = vec_ub; i < n; ++i) y[i] = a * x[i];
}

#define DIPRL_EW_KERNEL(fn, vop, sop)                                        \
  void fn(const double* x, const double* y, double* out, std::size_t n) {    \
    std::size_t vec_ub = (n / kLanes) * kLanes;                              \
    for (std::size_t i = 0; i < vec_ub; i += kLanes) {                       \
      _mm256_storeu_pd(out + i,                                              \
                       vop(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i))); \
    }                                                                        \
    for (std::size_t i = vec_ub; i < n; ++i) out[i] = x[i] sop y[i];         \
  }

DIPRL_EW_KERNEL(v_add, _mm256_add_pd, +)
DIPRL_EW_KERNEL(v_sub, _mm256_sub_pd, -)
DIPRL_EW_KERNEL(v_mul, _mm256_mul_pd, *)
DIPRL_EW_KERNEL(v_div, _mm256_div_pd, /)

#undef DIPRL_EW_KERNEL

void v_gemv(const double* a, std::size_t rows, std::size_t cols,
            const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = v_dot(a + r * cols, x, cols);
}

void v_gemv_t(const double* a, std::size_t rows, std::size_t cols,
              const double* x, double* y) {
  for (std::size_t c = 0; c < cols; ++c) y[c] = 0.0;
  for (std::size_t r = 0; r < rows; ++r) v_axpy(x[r], a + r * cols, y, cols);
}

void v_ger(double alpha, const double* x, const double* y, double* a,
           std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    v_axpy(alpha * x[r], y, a + r * cols, cols);
  }
}

}  // namespace

bool avx2_compiled() { return true; }

const Backend& avx2_backend_impl() {
  static const Backend b{
      "avx2", v_dot, v_sum, v_max,  v_axpy,   v_scale, v_add,
      v_sub,  v_mul, v_div, v_gemv, v_gemv_t, v_ger,
  };
  return b;
}

}  // namespace diprl::kernels

#else  // !(__AVX2__ && __FMA__)

namespace diprl::kernels {
bool avx2_compiled() { return false; }
const Backend& avx2_backend_impl() { return scalar_backend(); }
}  // namespace diprl::kernels

#endif
