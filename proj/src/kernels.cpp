#include "hetfx/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "hetfx/errors.hpp"
#include "kernels_detail.hpp"

namespace hetfx::kernels {

namespace {

std::atomic<const detail::KernelTable*> g_table{nullptr};
std::atomic<Backend> g_backend{Backend::scalar};

const detail::KernelTable* init_table() {
  Backend want = avx2_supported() ? Backend::avx2 : Backend::scalar;
  if (const char* env = std::getenv("HETFX_SIMD")) {
    if (std::strcmp(env, "scalar") == 0) want = Backend::scalar;
    else if (std::strcmp(env, "avx2") == 0 && avx2_supported()) want = Backend::avx2;
  }
  g_backend.store(want, std::memory_order_relaxed);
  const detail::KernelTable* t =
      want == Backend::avx2 ? &detail::avx2_table() : &detail::scalar_table();
  g_table.store(t, std::memory_order_release);
  return t;
}

inline const detail::KernelTable& table() {
  const detail::KernelTable* t = g_table.load(std::memory_order_acquire);
  return t ? *t : *init_table();
}

}  // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend active_backend() {
  table();
  return g_backend.load(std::memory_order_relaxed);
}

void set_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_supported())
    throw DataError("AVX2 kernel backend requested but the CPU lacks AVX2/FMA");
  g_backend.store(b, std::memory_order_relaxed);
  g_table.store(b == Backend::avx2 ? &detail::avx2_table() : &detail::scalar_table(),
                std::memory_order_release);
}

const char* backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

void exp_v(const double* x, double* out, std::size_t n) { table().exp_v(x, out, n); }
void log_v(const double* x, double* out, std::size_t n) { table().log_v(x, out, n); }

void mu_from_eta(Family f, const double* eta, double* mu, std::size_t n) {
  table().mu_from_eta(f, eta, mu, n);
}

void irls_weights(Family f, const double* eta, const double* mu, const double* y, double* w,
                  double* wres, std::size_t n) {
  table().irls_weights(f, eta, mu, y, w, wres, n);
}

double deviance_sum(Family f, const double* y, const double* eta, const double* mu,
                    const double* ylogy, std::size_t n) {
  return table().deviance_sum(f, y, eta, mu, ylogy, n);
}

double loglik_sum(Family f, const double* y, const double* eta, const double* mu, std::size_t n) {
  return table().loglik_sum(f, y, eta, mu, n);
}

}  // namespace hetfx::kernels
