#pragma once

#include <string>

namespace hetfx {

// Exponential families with their canonical links: identity for continuous,
// log for counts, logit for binary outcomes.
enum class Family { gaussian, poisson, bernoulli };

const char* family_name(Family f);
Family family_from_name(const std::string& name);  // accepts gaussian|poisson|binomial(|bernoulli)

// The logit linear predictor is clamped to +-30 before exponentiation.
// exp(30) ~ 1e13, so the clamp moves probabilities by less than 1e-13 while
// keeping mu strictly inside (0,1).
inline constexpr double kLogitEtaClamp = 30.0;

double link(Family f, double mu);            // g(mu)
double inverse_link(Family f, double eta);   // g^{-1}(eta)
double mu_eta(Family f, double eta);         // d mu / d eta at eta (canonical: equals variance)
double variance_function(Family f, double mu);
double unit_deviance(Family f, double y, double mu);

// Starting value for the linear predictor in IRLS/PIRLS, following the usual
// GLM conventions (shrink y away from the boundary of the mean space).
double eta_start(Family f, double y);

// Checks that every outcome is admissible for the family (counts are
// non-negative integers, binary outcomes are 0/1). Throws DataError.
void validate_outcome(Family f, const double* y, long n);

}  // namespace hetfx
