#include "hetfx/families.hpp"

#include <cmath>
#include <cstdio>

#include "hetfx/errors.hpp"

namespace hetfx {

const char* family_name(Family f) {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::poisson: return "poisson";
    case Family::bernoulli: return "binomial";
  }
  return "?";
}

Family family_from_name(const std::string& name) {
  if (name == "gaussian" || name == "normal") return Family::gaussian;
  if (name == "poisson") return Family::poisson;
  if (name == "binomial" || name == "bernoulli" || name == "binary") return Family::bernoulli;
  throw DataError("unknown family '" + name + "' (expected gaussian, poisson or binomial)");
}

double link(Family f, double mu) {
  switch (f) {
    case Family::gaussian: return mu;
    case Family::poisson: return std::log(mu);
    case Family::bernoulli: return std::log(mu / (1.0 - mu));
  }
  return 0.0;
}

double inverse_link(Family f, double eta) {
  switch (f) {
    case Family::gaussian:
      return eta;
    case Family::poisson:
      return std::exp(eta);
    case Family::bernoulli: {
      const double e = eta > kLogitEtaClamp ? kLogitEtaClamp : (eta < -kLogitEtaClamp ? -kLogitEtaClamp : eta);
      return 1.0 / (1.0 + std::exp(-e));
    }
  }
  return 0.0;
}

double mu_eta(Family f, double eta) {
  switch (f) {
    case Family::gaussian: return 1.0;
    case Family::poisson: return std::exp(eta);
    case Family::bernoulli: {
      const double mu = inverse_link(Family::bernoulli, eta);
      return mu * (1.0 - mu);
    }
  }
  return 0.0;
}

double variance_function(Family f, double mu) {
  switch (f) {
    case Family::gaussian:
      return 1.0;
    case Family::poisson:
      if (mu <= 0.0) throw DataError("poisson variance function needs mu > 0");
      return mu;
    case Family::bernoulli:
      if (mu <= 0.0 || mu >= 1.0) throw DataError("bernoulli variance function needs mu in (0,1)");
      return mu * (1.0 - mu);
  }
  return 0.0;
}

double unit_deviance(Family f, double y, double mu) {
  switch (f) {
    case Family::gaussian: {
      const double r = y - mu;
      return r * r;
    }
    case Family::poisson: {
      const double ylogy = y > 0.0 ? y * std::log(y / mu) : 0.0;
      return 2.0 * (ylogy - (y - mu));
    }
    case Family::bernoulli:
      return -2.0 * (y * std::log(mu) + (1.0 - y) * std::log(1.0 - mu));
  }
  return 0.0;
}

double eta_start(Family f, double y) {
  switch (f) {
    case Family::gaussian: return y;
    case Family::poisson: return std::log(y + 0.1);
    case Family::bernoulli: return link(Family::bernoulli, (y + 0.5) / 2.0);
  }
  return 0.0;
}

void validate_outcome(Family f, const double* y, long n) {
  for (long i = 0; i < n; ++i) {
    const double v = y[i];
    if (!std::isfinite(v)) throw DataError("non-finite outcome at row " + std::to_string(i + 1));
    switch (f) {
      case Family::gaussian:
        break;
      case Family::poisson:
        if (v < 0.0 || std::abs(v - std::round(v)) > 1e-9)
          throw DataError("poisson outcome must be a non-negative integer (row " + std::to_string(i + 1) + ")");
        break;
      case Family::bernoulli:
        if (v != 0.0 && v != 1.0)
          throw DataError("binomial outcome must be 0 or 1 (row " + std::to_string(i + 1) + ")");
        break;
    }
  }
}

}  // namespace hetfx
