#include "hetfx/gee.hpp"

#include <Eigen/Cholesky>
#include <cmath>

#include "hetfx/errors.hpp"
#include "hetfx/kernels.hpp"

namespace hetfx {

GeeFitResult fit_gee(const DesignMatrices& design, Family family) {
  validate_outcome(family, design.y.data(), design.n());
  const int n = design.n();
  const int q = design.q();

  Eigen::VectorXd eta(n), mu(n), w(n), wres(n);
  for (int i = 0; i < n; ++i) eta[i] = eta_start(family, design.y[i]);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
  bool converged = false;
  for (int iter = 0; iter < 50; ++iter) {
    kernels::mu_from_eta(family, eta.data(), mu.data(), static_cast<std::size_t>(n));
    kernels::irls_weights(family, eta.data(), mu.data(), design.y.data(), w.data(), wres.data(),
                          static_cast<std::size_t>(n));
    const Eigen::VectorXd t = w.cwiseProduct(eta) + wres;
    const Eigen::MatrixXd xw = design.X.array().colwise() * w.array();
    const Eigen::MatrixXd info = design.X.transpose() * xw;
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() != Eigen::Success) throw FitError("GEE information matrix is singular");
    const Eigen::VectorXd beta_new = llt.solve(design.X.transpose() * t);
    const double delta = (beta_new - beta).cwiseAbs().maxCoeff();
    beta = beta_new;
    eta.noalias() = design.X * beta;
    if (delta < 1e-10 * std::max(1.0, beta.cwiseAbs().maxCoeff())) {
      converged = true;
      break;
    }
  }
  if (!converged) throw FitError("GEE IRLS did not converge in 50 iterations");

  kernels::mu_from_eta(family, eta.data(), mu.data(), static_cast<std::size_t>(n));
  kernels::irls_weights(family, eta.data(), mu.data(), design.y.data(), w.data(), wres.data(),
                        static_cast<std::size_t>(n));

  double phi = 1.0;
  if (family == Family::gaussian) {
    // Pearson mean square with n - q denominator
    phi = wres.squaredNorm() / static_cast<double>(n - q);
  }

  const Eigen::MatrixXd xw = design.X.array().colwise() * w.array();
  const Eigen::MatrixXd bread = (design.X.transpose() * xw) / phi;
  Eigen::LLT<Eigen::MatrixXd> llt(bread);
  if (llt.info() != Eigen::Success) throw FitError("GEE information matrix is singular");
  const Eigen::MatrixXd bread_inv = llt.solve(Eigen::MatrixXd::Identity(q, q));

  // Cluster score sums: with the canonical link D_i'V_i^{-1} r_i = X_i'r_i/phi.
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(q, q);
  for (int c = 0; c < design.n_clusters; ++c) {
    const long lo = design.cluster_start[static_cast<std::size_t>(c)];
    const long hi = design.cluster_start[static_cast<std::size_t>(c) + 1];
    Eigen::VectorXd s = Eigen::VectorXd::Zero(q);
    for (long i = lo; i < hi; ++i) s += design.X.row(i).transpose() * (wres[i] / phi);
    meat.noalias() += s * s.transpose();
  }

  GeeFitResult out;
  out.beta = beta;
  out.dispersion = phi;
  out.vcov_model = 0.5 * (bread_inv + bread_inv.transpose());
  out.vcov_robust = bread_inv * meat * bread_inv;
  out.vcov_robust = 0.5 * (out.vcov_robust + out.vcov_robust.transpose()).eval();
  out.converged = true;
  return out;
}

double FayGraubard::df_for(const Eigen::VectorXd& contrast) const {
  double sum = 0.0, sumsq = 0.0;
  for (const Eigen::MatrixXd& m : df_contrib) {
    const double wi = contrast.dot(m * contrast);
    sum += wi;
    sumsq += wi * wi;
  }
  if (sumsq <= 0.0) return 0.0;
  return sum * sum / sumsq;
}

FayGraubard fay_graubard_adjust(const GeeFitResult& fit, const DesignMatrices& design,
                                Family family, double b) {
  FayGraubard out;
  if (!fit.converged) return out;
  const int n = design.n();
  const int q = design.q();

  Eigen::VectorXd eta = design.X * fit.beta;
  Eigen::VectorXd mu(n), w(n), wres(n);
  kernels::mu_from_eta(family, eta.data(), mu.data(), static_cast<std::size_t>(n));
  kernels::irls_weights(family, eta.data(), mu.data(), design.y.data(), w.data(), wres.data(),
                        static_cast<std::size_t>(n));
  const double phi = fit.dispersion;

  std::vector<Eigen::MatrixXd> ginfo(static_cast<std::size_t>(design.n_clusters));
  std::vector<Eigen::VectorXd> gscore(static_cast<std::size_t>(design.n_clusters));
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(q, q);
  for (int c = 0; c < design.n_clusters; ++c) {
    const long lo = design.cluster_start[static_cast<std::size_t>(c)];
    const long hi = design.cluster_start[static_cast<std::size_t>(c) + 1];
    Eigen::MatrixXd gi = Eigen::MatrixXd::Zero(q, q);
    Eigen::VectorXd si = Eigen::VectorXd::Zero(q);
    for (long i = lo; i < hi; ++i) {
      gi.noalias() += design.X.row(i).transpose() * design.X.row(i) * (w[i] / phi);
      si += design.X.row(i).transpose() * (wres[i] / phi);
    }
    ginfo[static_cast<std::size_t>(c)] = gi;
    gscore[static_cast<std::size_t>(c)] = si;
    a += gi;
  }

  Eigen::LLT<Eigen::MatrixXd> allt(a);
  if (allt.info() != Eigen::Success) return out;  // singular information matrix
  const Eigen::MatrixXd a_inv = allt.solve(Eigen::MatrixXd::Identity(q, q));

  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(q, q);
  out.df_contrib.reserve(static_cast<std::size_t>(design.n_clusters));
  for (int c = 0; c < design.n_clusters; ++c) {
    const Eigen::MatrixXd h = ginfo[static_cast<std::size_t>(c)] * a_inv;
    Eigen::VectorXd adj(q);
    for (int j = 0; j < q; ++j) {
      const double hjj = h(j, j);
      if (!std::isfinite(hjj)) return out;
      adj[j] = 1.0 / std::sqrt(1.0 - std::min(b, hjj));
    }
    const Eigen::VectorXd s = adj.cwiseProduct(gscore[static_cast<std::size_t>(c)]);
    meat.noalias() += s * s.transpose();
    const Eigen::MatrixXd gi_adj =
        adj.asDiagonal() * ginfo[static_cast<std::size_t>(c)] * adj.asDiagonal();
    out.df_contrib.push_back(a_inv * gi_adj * a_inv);
  }

  out.vcov_fg = a_inv * meat * a_inv;
  out.vcov_fg = 0.5 * (out.vcov_fg + out.vcov_fg.transpose()).eval();
  if (!out.vcov_fg.allFinite()) {
    out.df_contrib.clear();
    return out;
  }
  out.applicable = true;
  Eigen::VectorXd contrast = Eigen::VectorXd::Zero(q);
  contrast[design.interaction_col()] = 1.0;
  out.df_interaction = out.df_for(contrast);
  return out;
}

}  // namespace hetfx
