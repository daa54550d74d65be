#include "diprl/kernels.hpp"

#include <atomic>
#include <cstdlib>

namespace diprl::kernels {

bool avx2_compiled();
const Backend& avx2_backend_impl();

namespace {

bool cpu_has_avx2() {
#if defined(__GNUC__) && (defined(__x86_64__) || defined(__i386__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

bool env_forces_scalar() {
  const char* v = std::getenv("DIPRL_FORCE_SCALAR");
  return v != nullptr && v[0] != '\0' && v[0] != '0';
}

std::atomic<bool> g_force_scalar{env_forces_scalar()};

}  // namespace

bool avx2_available() {
  static const bool ok = avx2_compiled() && cpu_has_avx2();
  return ok;
}

const Backend& avx2_backend() {
  return avx2_available() ? avx2_backend_impl() : scalar_backend();
}

const Backend& active() {
  if (g_force_scalar.load(std::memory_order_relaxed)) return scalar_backend();
  return avx2_backend();
}

void set_force_scalar(bool force) {
  g_force_scalar.store(force, std::memory_order_relaxed);
}

}  // namespace diprl::kernels
