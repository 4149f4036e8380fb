#include <cmath>
#include <cstdint>

#include "kernels_detail.hpp"

// AVX2+FMA backend. exp/log follow the classic Cephes rational schemes
// (~1-2 ulp over the fitting range). Vector tails reuse the same polynomial
// evaluated scalar-wise, so results are independent of array length and
// alignment; only the scalar libm backend differs, within ulp tolerances
// checked by the equivalence tests.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

namespace hetfx::kernels::detail {
namespace {

constexpr double kExpLo = -708.0;
constexpr double kExpHi = 709.0;
constexpr double kLog2E = 1.4426950408889634073599;
constexpr double kLn2Hi = 6.93145751953125e-1;
constexpr double kLn2Lo = 1.42860682030941723212e-6;

constexpr double kExpP0 = 1.26177193074810590878e-4;
constexpr double kExpP1 = 3.02994407707441961300e-2;
constexpr double kExpP2 = 9.99999999999999999910e-1;
constexpr double kExpQ0 = 3.00198505138664455042e-6;
constexpr double kExpQ1 = 2.52448340349684104192e-3;
constexpr double kExpQ2 = 2.27265548208155028766e-1;
constexpr double kExpQ3 = 2.00000000000000000005e0;

// exp core shared by the vector body and the scalar tail.
inline double cexp(double x) {
  x = x < kExpLo ? kExpLo : (x > kExpHi ? kExpHi : x);
  const double pn = std::nearbyint(kLog2E * x);
  const double r = x - pn * kLn2Hi - pn * kLn2Lo;
  const double rr = r * r;
  const double p = r * (kExpP2 + rr * (kExpP1 + rr * kExpP0));
  const double q = kExpQ3 + rr * (kExpQ2 + rr * (kExpQ1 + rr * kExpQ0));
  const double e = 1.0 + 2.0 * p / (q - p);
  const std::int64_t n = static_cast<std::int64_t>(pn);
  std::uint64_t bits = static_cast<std::uint64_t>(n + 1023) << 52;
  double scale;
  __builtin_memcpy(&scale, &bits, sizeof scale);
  return e * scale;
}

inline __m256d vexp(__m256d x) {
  const __m256d lo = _mm256_set1_pd(kExpLo), hi = _mm256_set1_pd(kExpHi);
  x = _mm256_min_pd(_mm256_max_pd(x, lo), hi);
  const __m256d pn = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(kLog2E)),
                                     _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(pn, _mm256_set1_pd(kLn2Hi), x);
  r = _mm256_fnmadd_pd(pn, _mm256_set1_pd(kLn2Lo), r);
  const __m256d rr = _mm256_mul_pd(r, r);
  __m256d p = _mm256_fmadd_pd(rr, _mm256_set1_pd(kExpP0), _mm256_set1_pd(kExpP1));
  p = _mm256_fmadd_pd(rr, p, _mm256_set1_pd(kExpP2));
  p = _mm256_mul_pd(r, p);
  __m256d q = _mm256_fmadd_pd(rr, _mm256_set1_pd(kExpQ0), _mm256_set1_pd(kExpQ1));
  q = _mm256_fmadd_pd(rr, q, _mm256_set1_pd(kExpQ2));
  q = _mm256_fmadd_pd(rr, q, _mm256_set1_pd(kExpQ3));
  const __m256d frac = _mm256_div_pd(p, _mm256_sub_pd(q, p));
  const __m256d e = _mm256_fmadd_pd(_mm256_set1_pd(2.0), frac, _mm256_set1_pd(1.0));
  // 2^n via exponent bits; n is within [-1023, 1023] after the clamp.
  const __m128i ni = _mm256_cvtpd_epi32(pn);
  const __m256i n64 = _mm256_cvtepi32_epi64(ni);
  const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
  return _mm256_mul_pd(e, _mm256_castsi256_pd(bits));
}

constexpr double kSqrtHalf = 0.70710678118654752440;
constexpr double kLogP[6] = {1.01875663804580931796e-4, 4.97494994976747001425e-1,
                             4.70579119878881725854e0,  1.44989225341610930846e1,
                             1.79368678507819816313e1,  7.70838733755885391666e0};
constexpr double kLogQ[5] = {1.12873587189167450590e1, 4.52279145837532221105e1,
                             8.29875266912776603211e1, 7.11544750618563894466e1,
                             2.31251620126765340583e1};
constexpr double kLogE4 = 2.121944400546905827679e-4;  // ln2 split: 0.693359375 - kLogE4
constexpr double kLogC2 = 0.693359375;

inline double clog(double x) {
  std::uint64_t bits;
  __builtin_memcpy(&bits, &x, sizeof bits);
  int e = static_cast<int>((bits >> 52) & 0x7ff) - 1022;
  bits = (bits & 0x000fffffffffffffULL) | 0x3fe0000000000000ULL;
  double m;
  __builtin_memcpy(&m, &bits, sizeof m);
  if (m < kSqrtHalf) {
    e -= 1;
    m = 2.0 * m - 1.0;
  } else {
    m = m - 1.0;
  }
  const double z = m * m;
  double pp = kLogP[0];
  for (int i = 1; i < 6; ++i) pp = pp * m + kLogP[i];
  double qq = m + kLogQ[0];
  for (int i = 1; i < 5; ++i) qq = qq * m + kLogQ[i];
  double y = m * (z * pp / qq);
  y -= e * kLogE4;
  y -= 0.5 * z;
  return (m + y) + e * kLogC2;
}

inline __m256d vlog(__m256d x) {
  const __m256i raw = _mm256_castpd_si256(x);
  const __m256i expo = _mm256_srli_epi64(raw, 52);
  // exponent field minus 1022, as packed doubles
  const __m256i ebias = _mm256_sub_epi64(_mm256_and_si256(expo, _mm256_set1_epi64x(0x7ff)),
                                         _mm256_set1_epi64x(1022));
  // int64 -> double for magnitudes < 2^31: via int32 gather of low lanes
  alignas(32) std::int64_t etmp[4];
  _mm256_store_si256(reinterpret_cast<__m256i*>(etmp), ebias);
  __m256d e = _mm256_set_pd(static_cast<double>(etmp[3]), static_cast<double>(etmp[2]),
                            static_cast<double>(etmp[1]), static_cast<double>(etmp[0]));
  const __m256i mantbits =
      _mm256_or_si256(_mm256_and_si256(raw, _mm256_set1_epi64x(0x000fffffffffffffLL)),
                      _mm256_set1_epi64x(0x3fe0000000000000LL));
  __m256d m = _mm256_castsi256_pd(mantbits);
  const __m256d below = _mm256_cmp_pd(m, _mm256_set1_pd(kSqrtHalf), _CMP_LT_OQ);
  e = _mm256_sub_pd(e, _mm256_and_pd(below, _mm256_set1_pd(1.0)));
  const __m256d m2 = _mm256_fmadd_pd(m, _mm256_set1_pd(2.0), _mm256_set1_pd(-1.0));
  const __m256d m1 = _mm256_sub_pd(m, _mm256_set1_pd(1.0));
  m = _mm256_blendv_pd(m1, m2, below);
  const __m256d z = _mm256_mul_pd(m, m);
  __m256d pp = _mm256_set1_pd(kLogP[0]);
  for (int i = 1; i < 6; ++i) pp = _mm256_fmadd_pd(pp, m, _mm256_set1_pd(kLogP[i]));
  __m256d qq = _mm256_add_pd(m, _mm256_set1_pd(kLogQ[0]));
  for (int i = 1; i < 5; ++i) qq = _mm256_fmadd_pd(qq, m, _mm256_set1_pd(kLogQ[i]));
  __m256d y = _mm256_mul_pd(m, _mm256_mul_pd(z, _mm256_div_pd(pp, qq)));
  y = _mm256_fnmadd_pd(e, _mm256_set1_pd(kLogE4), y);
  y = _mm256_fnmadd_pd(z, _mm256_set1_pd(0.5), y);
  return _mm256_fmadd_pd(e, _mm256_set1_pd(kLogC2), _mm256_add_pd(m, y));
}

inline __m256d vclamp_logit(__m256d eta) {
  return _mm256_min_pd(_mm256_max_pd(eta, _mm256_set1_pd(-kLogitEtaClamp)),
                       _mm256_set1_pd(kLogitEtaClamp));
}

inline double sclamp_logit(double eta) {
  return eta > kLogitEtaClamp ? kLogitEtaClamp : (eta < -kLogitEtaClamp ? -kLogitEtaClamp : eta);
}

inline double hsum(__m256d v) {
  alignas(32) double t[4];
  _mm256_store_pd(t, v);
  return ((t[0] + t[1]) + t[2]) + t[3];
}

void a_exp_v(const double* x, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, vexp(_mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = cexp(x[i]);
}

void a_log_v(const double* x, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, vlog(_mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = clog(x[i]);
}

void a_mu_from_eta(Family f, const double* eta, double* mu, std::size_t n) {
  std::size_t i = 0;
  switch (f) {
    case Family::gaussian:
      for (; i < n; ++i) mu[i] = eta[i];
      break;
    case Family::poisson:
      a_exp_v(eta, mu, n);
      break;
    case Family::bernoulli: {
      const __m256d one = _mm256_set1_pd(1.0);
      for (; i + 4 <= n; i += 4) {
        const __m256d e = vclamp_logit(_mm256_loadu_pd(eta + i));
        const __m256d ex = vexp(_mm256_sub_pd(_mm256_setzero_pd(), e));
        _mm256_storeu_pd(mu + i, _mm256_div_pd(one, _mm256_add_pd(one, ex)));
      }
      for (; i < n; ++i) mu[i] = 1.0 / (1.0 + cexp(-sclamp_logit(eta[i])));
      break;
    }
  }
}

void a_irls_weights(Family f, const double* eta, const double* mu, const double* y, double* w,
                    double* wres, std::size_t n) {
  std::size_t i = 0;
  switch (f) {
    case Family::gaussian:
      for (; i < n; ++i) {
        w[i] = 1.0;
        wres[i] = y[i] - eta[i];
      }
      break;
    case Family::poisson:
      for (; i + 4 <= n; i += 4) {
        const __m256d m = _mm256_loadu_pd(mu + i);
        _mm256_storeu_pd(w + i, m);
        _mm256_storeu_pd(wres + i, _mm256_sub_pd(_mm256_loadu_pd(y + i), m));
      }
      for (; i < n; ++i) {
        w[i] = mu[i];
        wres[i] = y[i] - mu[i];
      }
      break;
    case Family::bernoulli:
      for (; i + 4 <= n; i += 4) {
        const __m256d m = _mm256_loadu_pd(mu + i);
        _mm256_storeu_pd(w + i, _mm256_mul_pd(m, _mm256_sub_pd(_mm256_set1_pd(1.0), m)));
        _mm256_storeu_pd(wres + i, _mm256_sub_pd(_mm256_loadu_pd(y + i), m));
      }
      for (; i < n; ++i) {
        w[i] = mu[i] * (1.0 - mu[i]);
        wres[i] = y[i] - mu[i];
      }
      break;
  }
}

double a_deviance_sum(Family f, const double* y, const double* eta, const double* mu,
                      const double* ylogy, std::size_t n) {
  std::size_t i = 0;
  __m256d acc = _mm256_setzero_pd();
  double tail = 0.0;
  switch (f) {
    case Family::gaussian:
      for (; i + 4 <= n; i += 4) {
        const __m256d r = _mm256_sub_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(eta + i));
        acc = _mm256_fmadd_pd(r, r, acc);
      }
      for (; i < n; ++i) {
        const double r = y[i] - eta[i];
        tail += r * r;
      }
      return hsum(acc) + tail;
    case Family::poisson:
      for (; i + 4 <= n; i += 4) {
        const __m256d yi = _mm256_loadu_pd(y + i);
        __m256d t = _mm256_sub_pd(_mm256_loadu_pd(ylogy + i),
                                  _mm256_mul_pd(yi, _mm256_loadu_pd(eta + i)));
        t = _mm256_sub_pd(t, _mm256_sub_pd(yi, _mm256_loadu_pd(mu + i)));
        acc = _mm256_add_pd(acc, t);
      }
      for (; i < n; ++i) tail += ylogy[i] - y[i] * eta[i] - (y[i] - mu[i]);
      return 2.0 * (hsum(acc) + tail);
    case Family::bernoulli: {
      const __m256d zero = _mm256_setzero_pd();
      const __m256d one = _mm256_set1_pd(1.0);
      const __m256d absmask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
      for (; i + 4 <= n; i += 4) {
        const __m256d e = vclamp_logit(_mm256_loadu_pd(eta + i));
        const __m256d a = _mm256_and_pd(e, absmask);
        const __m256d ez = vexp(_mm256_sub_pd(zero, a));
        const __m256d sp = _mm256_add_pd(_mm256_max_pd(e, zero), vlog(_mm256_add_pd(one, ez)));
        acc = _mm256_add_pd(acc, _mm256_fnmadd_pd(_mm256_loadu_pd(y + i), e, sp));
      }
      for (; i < n; ++i) {
        const double e = sclamp_logit(eta[i]);
        const double sp = (e > 0.0 ? e : 0.0) + clog(1.0 + cexp(-std::abs(e)));
        tail += sp - y[i] * e;
      }
      return 2.0 * (hsum(acc) + tail);
    }
  }
  return 0.0;
}

double a_loglik_sum(Family f, const double* y, const double* eta, const double* mu,
                    std::size_t n) {
  std::size_t i = 0;
  __m256d acc = _mm256_setzero_pd();
  double tail = 0.0;
  switch (f) {
    case Family::gaussian:
      return 0.0;
    case Family::poisson:
      for (; i + 4 <= n; i += 4) {
        const __m256d t = _mm256_fmsub_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(eta + i),
                                          _mm256_loadu_pd(mu + i));
        acc = _mm256_add_pd(acc, t);
      }
      for (; i < n; ++i) tail += y[i] * eta[i] - mu[i];
      return hsum(acc) + tail;
    case Family::bernoulli: {
      const __m256d zero = _mm256_setzero_pd();
      const __m256d one = _mm256_set1_pd(1.0);
      const __m256d absmask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
      for (; i + 4 <= n; i += 4) {
        const __m256d e = vclamp_logit(_mm256_loadu_pd(eta + i));
        const __m256d a = _mm256_and_pd(e, absmask);
        const __m256d ez = vexp(_mm256_sub_pd(zero, a));
        const __m256d sp = _mm256_add_pd(_mm256_max_pd(e, zero), vlog(_mm256_add_pd(one, ez)));
        acc = _mm256_add_pd(acc, _mm256_fmsub_pd(_mm256_loadu_pd(y + i), e, sp));
      }
      for (; i < n; ++i) {
        const double e = sclamp_logit(eta[i]);
        const double sp = (e > 0.0 ? e : 0.0) + clog(1.0 + cexp(-std::abs(e)));
        tail += y[i] * e - sp;
      }
      return hsum(acc) + tail;
    }
  }
  return 0.0;
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable t{a_exp_v, a_log_v, a_mu_from_eta, a_irls_weights, a_deviance_sum,
                             a_loglik_sum};
  return t;
}

}  // namespace hetfx::kernels::detail

#else  // non-x86: the dispatcher never asks for this table

namespace hetfx::kernels::detail {
const KernelTable& avx2_table() { return scalar_table(); }
}  // namespace hetfx::kernels::detail

#endif
