#pragma once

#include <Eigen/Dense>
#include <vector>

#include "hetfx/design.hpp"
#include "hetfx/families.hpp"

namespace hetfx {

// Marginal model fit with independence working correlation. beta equals the
// fixed-effects GLM MLE; vcov_robust is the cluster sandwich
//   A^{-1} (sum_i D_i'V_i^{-1} r_i r_i'V_i^{-1} D_i) A^{-1},  A = sum_i D_i'V_i^{-1} D_i.
struct GeeFitResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov_model;
  Eigen::MatrixXd vcov_robust;
  double dispersion = 1.0;  // Pearson-based, gaussian only (1 otherwise)
  bool converged = false;
};

GeeFitResult fit_gee(const DesignMatrices& design, Family family);

// Fay-Graubard bias-corrected sandwich: cluster score contributions are
// inflated by diag{(1 - min(b, [H_i]_jj))^{-1/2}} with H_i = G_i A^{-1},
// G_i = D_i'V_i^{-1}D_i. Also provides the Satterthwaite-style degrees of
// freedom (sum w_i)^2 / sum w_i^2 with w_i = c'A^{-1}A_i G_i A_i A^{-1}c.
// Singular per-cluster quantities make the correction inapplicable rather
// than a hard error; callers then use vcov_robust with df = N - 2.
struct FayGraubard {
  bool applicable = false;
  Eigen::MatrixXd vcov_fg;
  double df_interaction = 0.0;
  double df_for(const Eigen::VectorXd& contrast) const;
  std::vector<Eigen::MatrixXd> df_contrib;  // per-cluster A^{-1}A_i G_i A_i A^{-1}
};

FayGraubard fay_graubard_adjust(const GeeFitResult& fit, const DesignMatrices& design,
                                Family family, double b = 0.75);

}  // namespace hetfx
