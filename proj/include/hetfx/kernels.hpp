#pragma once

#include <cstddef>

#include "hetfx/families.hpp"

namespace hetfx::kernels {

// Elementwise family kernels used by the PIRLS/IRLS inner loops and the
// simulation engine. Two implementations exist: a scalar reference built on
// libm, and an AVX2+FMA variant. The active backend is chosen once at first
// use (honouring the HETFX_SIMD environment variable: auto|scalar|avx2) and
// can be overridden programmatically, which the equivalence tests use.
//
// Numeric contract: the AVX2 exp/log agree with libm to a few ulp over the
// ranges that occur in fitting (|eta| <= ~700 for exp, normal positive
// arguments for log). Both backends apply the identical +-30 logit clamp.

enum class Backend { scalar, avx2 };

bool avx2_supported();
Backend active_backend();
void set_backend(Backend b);  // throws DataError if unsupported on this CPU
const char* backend_name(Backend b);

// out[i] = exp(x[i]); saturates for |x| beyond the double exp range.
void exp_v(const double* x, double* out, std::size_t n);
// out[i] = log(x[i]) for normal positive x.
void log_v(const double* x, double* out, std::size_t n);

// mu[i] = g^{-1}(eta[i]) with the family's canonical link.
void mu_from_eta(Family f, const double* eta, double* mu, std::size_t n);

// IRLS working quantities for the canonical link:
//   w[i]    = (dmu/deta)^2 / V(mu) = V(mu)
//   wres[i] = W*(z - eta)          = y - mu
// (z is the usual working response eta + (y-mu)/(dmu/deta)).
void irls_weights(Family f, const double* eta, const double* mu, const double* y, double* w,
                  double* wres, std::size_t n);

// Sum of unit deviances. For poisson, ylogy must hold y*log(y) (0 for y=0),
// which callers precompute once per dataset; it is ignored otherwise.
double deviance_sum(Family f, const double* y, const double* eta, const double* mu,
                    const double* ylogy, std::size_t n);

// Log-likelihood sum up to per-dataset constants: poisson omits -lgamma(y+1),
// bernoulli is exact, gaussian is not handled here (closed form elsewhere).
double loglik_sum(Family f, const double* y, const double* eta, const double* mu, std::size_t n);

}  // namespace hetfx::kernels
