#include <cmath>

#include "kernels_detail.hpp"

// Scalar reference backend. This is the ground truth the AVX2 variant is
// equivalence-tested against; keep it on plain libm calls.

namespace hetfx::kernels::detail {
namespace {

void s_exp_v(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

void s_log_v(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::log(x[i]);
}

inline double clamp_logit(double eta) {
  return eta > kLogitEtaClamp ? kLogitEtaClamp : (eta < -kLogitEtaClamp ? -kLogitEtaClamp : eta);
}

void s_mu_from_eta(Family f, const double* eta, double* mu, std::size_t n) {
  switch (f) {
    case Family::gaussian:
      for (std::size_t i = 0; i < n; ++i) mu[i] = eta[i];
      break;
    case Family::poisson:
      for (std::size_t i = 0; i < n; ++i) mu[i] = std::exp(eta[i]);
      break;
    case Family::bernoulli:
      for (std::size_t i = 0; i < n; ++i) mu[i] = 1.0 / (1.0 + std::exp(-clamp_logit(eta[i])));
      break;
  }
}

void s_irls_weights(Family f, const double* eta, const double* mu, const double* y, double* w,
                    double* wres, std::size_t n) {
  switch (f) {
    case Family::gaussian:
      for (std::size_t i = 0; i < n; ++i) {
        w[i] = 1.0;
        wres[i] = y[i] - eta[i];
      }
      break;
    case Family::poisson:
      for (std::size_t i = 0; i < n; ++i) {
        w[i] = mu[i];
        wres[i] = y[i] - mu[i];
      }
      break;
    case Family::bernoulli:
      for (std::size_t i = 0; i < n; ++i) {
        w[i] = mu[i] * (1.0 - mu[i]);
        wres[i] = y[i] - mu[i];
      }
      break;
  }
}

double s_deviance_sum(Family f, const double* y, const double* eta, const double* mu,
                      const double* ylogy, std::size_t n) {
  double acc = 0.0;
  switch (f) {
    case Family::gaussian:
      for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - eta[i];
        acc += r * r;
      }
      return acc;
    case Family::poisson:
      // 2*[y log(y/mu) - (y-mu)] with log(mu)=eta under the canonical link.
      for (std::size_t i = 0; i < n; ++i) acc += ylogy[i] - y[i] * eta[i] - (y[i] - mu[i]);
      return 2.0 * acc;
    case Family::bernoulli:
      // 2*[softplus(eta) - y*eta]
      for (std::size_t i = 0; i < n; ++i) {
        const double e = clamp_logit(eta[i]);
        const double sp = (e > 0.0 ? e : 0.0) + std::log1p(std::exp(-std::abs(e)));
        acc += sp - y[i] * e;
      }
      return 2.0 * acc;
  }
  return acc;
}

double s_loglik_sum(Family f, const double* y, const double* eta, const double* mu,
                    std::size_t n) {
  double acc = 0.0;
  switch (f) {
    case Family::gaussian:
      return 0.0;  // handled in closed form by the LMM path
    case Family::poisson:
      for (std::size_t i = 0; i < n; ++i) acc += y[i] * eta[i] - mu[i];
      return acc;
    case Family::bernoulli:
      for (std::size_t i = 0; i < n; ++i) {
        const double e = clamp_logit(eta[i]);
        const double sp = (e > 0.0 ? e : 0.0) + std::log1p(std::exp(-std::abs(e)));
        acc += y[i] * e - sp;
      }
      return acc;
  }
  return acc;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{s_exp_v, s_log_v, s_mu_from_eta, s_irls_weights, s_deviance_sum,
                             s_loglik_sum};
  return t;
}

}  // namespace hetfx::kernels::detail
