#pragma once

#include <Eigen/Dense>
#include <utility>

#include "hetfx/design.hpp"
#include "hetfx/families.hpp"

namespace hetfx {

// Random-effects covariance parameters: the entries of the lower-triangular
// Cholesky factor of the per-cluster covariance block. Relative to the
// residual SD for gaussian fits, absolute otherwise.
//   cluster_intercept         theta = [L11]
//   subgroup random structure theta = [L11, L21, L22]
struct CovarianceParams {
  RandomEffects structure = RandomEffects::cluster_intercept;
  bool relative_scale = false;
  Eigen::VectorXd theta;

  int dim() const { return structure == RandomEffects::cluster_intercept ? 1 : 2; }
  Eigen::Matrix2d lambda() const;  // k x k factor in the top-left corner
  // Singular fit: a Cholesky diagonal entry below tol, i.e. a variance
  // component estimated at (numerically) zero.
  bool is_singular(double tol = 1e-4) const;
};

constexpr double kSingularTol = 1e-4;

struct FitResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov_beta;
  CovarianceParams theta_hat;
  double sigma_resid = 1.0;  // gaussian only
  double deviance = 0.0;     // -2 REML criterion (gaussian) or -2 Laplace log-likelihood
  Eigen::MatrixXd conditional_modes;  // n_clusters x k, on the data scale
  bool converged = false;
  bool singular = false;
  int n_outer_evals = 0;
  Family family = Family::gaussian;
  RandomEffects structure = RandomEffects::cluster_intercept;
  int n_clusters = 0;
};

enum class Criterion { ml, reml };

// Exact gaussian profiled deviance machinery. Cross-products are cached at
// construction, so one evaluation costs O(n_clusters) after O(n q^2) setup.
class LmmProfile {
public:
  LmmProfile(const DesignMatrices& design, RandomEffects structure);

  struct Eval {
    double deviance = 0.0;  // for the requested criterion
    double r2 = 0.0;        // penalized residual sum of squares
    double logdet_L = 0.0;  // log det(Lambda' Z'Z Lambda + I)
    double logdet_RX = 0.0;
    double sigma2_hat = 0.0;
    Eigen::VectorXd beta;
    Eigen::VectorXd u;  // spherical modes, stacked per cluster
    Eigen::MatrixXd S;  // profiled information for beta (unit weight scale)
  };
  Eval evaluate(const Eigen::VectorXd& theta, Criterion crit) const;
  // REML/ML criterion as a function of (theta, sigma) without profiling
  // sigma; used for the Satterthwaite machinery.
  double deviance_at(const Eigen::VectorXd& theta, double sigma, Criterion crit) const;

  int k() const { return k_; }
  int n() const { return n_; }
  int q() const { return q_; }

private:
  int k_, n_, q_, n_clusters_;
  double yy_;
  Eigen::MatrixXd azz_;   // n_clusters x (k*(k+1)/2) packed Z'Z blocks
  Eigen::MatrixXd azx_;   // (n_clusters*k) x q
  Eigen::VectorXd azy_;   // n_clusters*k
  Eigen::MatrixXd axx_;   // q x q
  Eigen::VectorXd axy_;   // q
};

// One Laplace objective evaluation: penalized IRLS over (beta, u) jointly on
// the augmented system, then the Laplace deviance
//   -2 [ log f(y | beta, u_hat) - u_hat'u_hat/2 - log det(L)/2 ].
// For gaussian models this is the exact profiled ML deviance.
struct PirlsSolve {
  Eigen::VectorXd beta;
  Eigen::VectorXd u;
  double laplace_deviance = 0.0;
  bool converged = false;
  int iterations = 0;
};
PirlsSolve pirls_solve(const CovarianceParams& theta, const DesignMatrices& design, Family family);

// Profiled deviance in theta: exact (RE)ML for gaussian, Laplace for the
// rest. REML is only defined for gaussian.
double profiled_deviance(const CovarianceParams& theta, const DesignMatrices& design,
                         Family family, Criterion criterion);

// Fits by minimizing the profiled deviance over theta with a bounded
// Nelder-Mead search (diagonals >= 0), starting from unit diagonals, capped
// at 10000 objective evaluations. Gaussian models use REML, others Laplace
// ML. Optimizer failure comes back as converged=false, never silently.
FitResult fit_glmm(const DesignMatrices& design, Family family, RandomEffects structure);

// Two-step procedure: fit the flexible model; on a singular (or failed) fit
// fall back to the standard cluster-intercept model.
std::pair<FitResult, bool> fit_two_step(const DesignMatrices& design, Family family);

// Marginal covariance of the subgroup-level random effects (U_0, U_1)
// implied by the fitted parameterization (p=2 structures only).
Eigen::Matrix2d implied_subgroup_cov(const FitResult& fit);

// Same design with a replaced outcome vector (for bootstrap refits).
DesignMatrices with_outcome(const DesignMatrices& design, const Eigen::VectorXd& y);

}  // namespace hetfx
