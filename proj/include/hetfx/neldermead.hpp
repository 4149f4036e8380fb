#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>

namespace hetfx {

// Box-constrained Nelder-Mead. Candidate points are projected onto the
// bounds before evaluation, which lets the simplex settle on a boundary
// (variance components at zero). Deterministic for a given objective.
struct NelderMeadOptions {
  double xtol_abs = 1e-8;
  double ftol_abs = 1e-10;
  int max_evals = 10000;
  double initial_step = 0.25;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double fmin = std::numeric_limits<double>::quiet_NaN();
  int n_evals = 0;
  bool converged = false;
};

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
                             const Eigen::VectorXd& upper, const NelderMeadOptions& opts = {});

}  // namespace hetfx
