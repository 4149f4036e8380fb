#pragma once

// Test-only reference implementations, independent of the library's fitting
// paths: a Newton GLM solver, adaptive Gauss-Hermite marginal deviance for
// Poisson random-intercept models, dense multivariate-normal LMM deviances,
// and the balanced one-way ANOVA REML closed form.

#include <Eigen/Dense>

#include "hetfx/design.hpp"
#include "hetfx/families.hpp"

namespace hetfx::oracles {

// Fixed-effects GLM MLE by damped Newton on the log-likelihood, gradient
// tolerance 1e-12.
Eigen::VectorXd glm_newton(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family);

// -2 log marginal likelihood of a Poisson random-intercept GLMM at fixed
// (beta, sd_b), integrating each cluster's intercept with n_nodes adaptive
// Gauss-Hermite quadrature. Includes the lgamma(y+1) constants.
double aghq_poisson_deviance(const DesignMatrices& design, const Eigen::VectorXd& beta,
                             double sd_b, int n_nodes = 64);

// Dense-matrix profiled gaussian deviance: V0 = I + Z Lambda Lambda' Z'.
struct MvnDeviance {
  double ml = 0.0;
  double reml = 0.0;
};
MvnDeviance mvn_profiled_deviance(const DesignMatrices& design, RandomEffects structure,
                                  const Eigen::VectorXd& theta);

// Balanced one-way ANOVA REML closed form, with cluster means centered on
// their arm means (q_between arms; pass 1 for an intercept-only model).
struct AnovaReml {
  double sigma2_b = 0.0;   // between-cluster variance
  double sigma2_e = 0.0;   // residual variance
  double ms_between = 0.0;
  double ms_within = 0.0;
};
AnovaReml balanced_anova_reml(const Eigen::VectorXd& y, int n_clusters, int cluster_size,
                              const std::vector<int>& arm);

// Hand-assembled design for fitter tests that do not use the interaction
// model (rows must already be grouped by cluster).
DesignMatrices raw_design(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          const std::vector<int>& cluster, const Eigen::VectorXd& subgroup_dummy);

}  // namespace hetfx::oracles
