#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hetfx/design.hpp"
#include "hetfx/gee.hpp"
#include "hetfx/glmm.hpp"

namespace hetfx {

// Reference-distribution choices for the Wald interaction test. normal is the
// asymptotic z test; the rest are the small-cluster corrections (t tests with
// the named degrees of freedom, or the parametric bootstrap CI decision).
// fay_graubard applies to GEE fits only.
enum class DfMethod { normal, satterthwaite, between_within, n_minus_p, bootstrap, fay_graubard };

const char* df_method_name(DfMethod m);

struct HTETest {
  double estimate = 0.0;
  double se = 0.0;
  double statistic = 0.0;
  DfMethod method = DfMethod::normal;
  std::optional<double> df;
  std::optional<double> p_value;  // empty for bootstrap
  double ci_low = 0.0;
  double ci_high = 0.0;
  double alpha = 0.05;
  bool df_fallback = false;  // correction fell back to df = N - 2
  bool reject() const { return ci_low > 0.0 || ci_high < 0.0; }
};

struct SubgroupEffect {
  int level = 0;
  double estimate = 0.0;
  double se = 0.0;
  std::optional<double> df;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct SubgroupEffects {
  std::vector<SubgroupEffect> effects;
  DfMethod method = DfMethod::normal;
  double alpha = 0.05;
};

// Satterthwaite degrees of freedom for c'beta under a gaussian REML fit:
//   df = 2 (c'V c)^2 / Var(c'V c),
// with the variance of the variance estimate obtained by the delta method
// over (theta, sigma): gradient by central finite differences (relative step
// 1e-4) and parameter covariance 2*H^{-1} from the numerically
// differentiated REML deviance Hessian. Non-PD Hessian falls back to
// df = N - 2 with the fallback flag set. df is floored at 1.
struct SatterthwaiteResult {
  double df = 0.0;
  bool fallback = false;
};
SatterthwaiteResult satterthwaite_df(const FitResult& fit, const DesignMatrices& design,
                                     const Eigen::VectorXd& contrast);

// Between-within partition: contrasts touching only between-cluster columns
// get N - q_between, anything else n - N - q_within.
double between_within_df(const DesignMatrices& design, const Eigen::VectorXd& contrast);

// N minus the number of cluster-level fixed-effect columns.
double n_minus_p_df(const DesignMatrices& design);

struct BootstrapCi {
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n_singular_boot = 0;
  int n_failed = 0;
  std::vector<double> estimates;  // converged interaction draws, replicate order
  Eigen::MatrixXd beta_draws;     // converged replicates x q
  double percentile(const std::vector<double>& draws, double p) const;
};

// Parametric bootstrap: B datasets simulated from the fitted model (fresh
// random effects from the estimated covariance plus family noise), each refit
// with the same specification; CI = empirical 2.5/97.5 percentiles of the
// interaction estimates. Replicate b draws from substream(seed, b), so the
// result does not depend on evaluation order. Errors if more than half the
// refits fail.
BootstrapCi parametric_bootstrap_ci(const FitResult& fit, const DesignMatrices& design,
                                    Family family, int B, std::uint64_t seed, double alpha = 0.05);

// Wald test for the treatment x subgroup interaction. For p > 2 only the
// normal method is available and the test is the joint chi-square on the
// interaction block. bootstrap requires the precomputed draws.
HTETest wald_interaction_test(const FitResult& fit, const DesignMatrices& design, DfMethod method,
                              double alpha = 0.05, const BootstrapCi* boot = nullptr);
HTETest wald_interaction_test_gee(const GeeFitResult& fit, const DesignMatrices& design,
                                  Family family, DfMethod method, double alpha = 0.05);

// Within-subgroup intervention effects: reference level uses e_trt, level g
// uses e_trt + e_{trt x g}; CIs follow the same df rule as the HTE test.
SubgroupEffects subgroup_effects(const FitResult& fit, const DesignMatrices& design,
                                 DfMethod method, double alpha = 0.05,
                                 const BootstrapCi* boot = nullptr);
SubgroupEffects subgroup_effects_gee(const GeeFitResult& fit, const DesignMatrices& design,
                                     Family family, DfMethod method, double alpha = 0.05);

// The correction menu: which method backs the "auto" policy for a given
// fitted model, family, cluster count and assumed truth. Corrections engage
// at N <= 12 (the paper's small-N regime); 12 < N < 50 stays on normal
// theory and callers should warn.
enum class ModelKind { flexible, standard, gee };
DfMethod select_correction(ModelKind kind, Family family, int n_clusters,
                           bool assume_flexible_truth = true);

constexpr int kSmallClusterThreshold = 12;

// Reference distributions (boost.math underneath); exposed for tests.
double normal_cdf(double x);
double normal_quantile(double p);
double t_cdf(double x, double df);
double t_quantile(double p, double df);
double chisq_cdf(double x, double df);

}  // namespace hetfx
