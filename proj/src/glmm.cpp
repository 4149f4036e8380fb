#include "hetfx/glmm.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <limits>

#include "hetfx/errors.hpp"
#include "hetfx/kernels.hpp"
#include "hetfx/neldermead.hpp"

namespace hetfx {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kMaxPirlsIter = 100;
constexpr int kMaxHalvings = 10;
constexpr double kPirlsRelTol = 1e-8;

inline int re_dim(RandomEffects s) {
  switch (s) {
    case RandomEffects::cluster_intercept: return 1;
    case RandomEffects::subgroup_within_cluster:
    case RandomEffects::subgroup_intercepts: return 2;
    case RandomEffects::none: break;
  }
  throw DataError("model has no random effects");
}

// Z row for a subject with subgroup dummy s (p=2).
inline void z_row(RandomEffects structure, double s, double z[2]) {
  if (structure == RandomEffects::subgroup_intercepts) {
    z[0] = 1.0 - s;
    z[1] = s;
  } else {
    z[0] = 1.0;
    z[1] = s;  // unused for k=1
  }
}

void check_structure(const DesignMatrices& design, RandomEffects structure) {
  if (structure == RandomEffects::none) throw DataError("GLMM needs a random-effects structure");
  if (structure != RandomEffects::cluster_intercept && design.p_levels != 2)
    throw DataError("subgroup random-effect structures are implemented for p=2 only (got p=" +
                    std::to_string(design.p_levels) + ")");
}

Eigen::MatrixXd lambda_from_theta(const Eigen::VectorXd& theta, int k) {
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(k, k);
  if (k == 1) {
    L(0, 0) = theta[0];
  } else {
    L(0, 0) = theta[0];
    L(1, 0) = theta[1];
    L(1, 1) = theta[2];
  }
  return L;
}

}  // namespace

Eigen::Matrix2d CovarianceParams::lambda() const {
  Eigen::Matrix2d L = Eigen::Matrix2d::Zero();
  const Eigen::MatrixXd M = lambda_from_theta(theta, dim());
  L.topLeftCorner(dim(), dim()) = M;
  return L;
}

bool CovarianceParams::is_singular(double tol) const {
  if (dim() == 1) return std::abs(theta[0]) < tol;
  return std::abs(theta[0]) < tol || std::abs(theta[2]) < tol;
}

// ---------------------------------------------------------------------------
// Gaussian: exact profiled (RE)ML through cached cross-products.
// ---------------------------------------------------------------------------

LmmProfile::LmmProfile(const DesignMatrices& design, RandomEffects structure) {
  check_structure(design, structure);
  k_ = re_dim(structure);
  n_ = design.n();
  q_ = design.q();
  n_clusters_ = design.n_clusters;

  const int kk = k_ * (k_ + 1) / 2;
  azz_.setZero(n_clusters_, kk);
  azx_.setZero(static_cast<Eigen::Index>(n_clusters_) * k_, q_);
  azy_.setZero(static_cast<Eigen::Index>(n_clusters_) * k_);
  axx_ = design.X.transpose() * design.X;
  axy_ = design.X.transpose() * design.y;
  yy_ = design.y.squaredNorm();

  double z[2];
  for (int c = 0; c < n_clusters_; ++c) {
    const long b = design.cluster_start[static_cast<std::size_t>(c)];
    const long e = design.cluster_start[static_cast<std::size_t>(c) + 1];
    for (long i = b; i < e; ++i) {
      z_row(structure, design.subgroup_dummy[i], z);
      if (k_ == 1) {
        azz_(c, 0) += 1.0;
        azy_[c] += design.y[i];
        azx_.row(c) += design.X.row(i);
      } else {
        azz_(c, 0) += z[0] * z[0];
        azz_(c, 1) += z[1] * z[0];
        azz_(c, 2) += z[1] * z[1];
        azy_[2 * c] += z[0] * design.y[i];
        azy_[2 * c + 1] += z[1] * design.y[i];
        azx_.row(2 * c) += z[0] * design.X.row(i);
        azx_.row(2 * c + 1) += z[1] * design.X.row(i);
      }
    }
  }
}

LmmProfile::Eval LmmProfile::evaluate(const Eigen::VectorXd& theta, Criterion crit) const {
  const Eigen::MatrixXd lam = lambda_from_theta(theta, k_);
  Eval out;
  out.S = axx_;
  Eigen::VectorXd s = axy_;
  out.logdet_L = 0.0;

  Eigen::MatrixXd uzz(k_, k_), lc(k_, k_), rzx(k_, q_);
  Eigen::VectorXd rzy(k_);
  std::vector<Eigen::MatrixXd> lcs(static_cast<std::size_t>(n_clusters_));
  std::vector<Eigen::MatrixXd> rzxs(static_cast<std::size_t>(n_clusters_));
  std::vector<Eigen::VectorXd> rzys(static_cast<std::size_t>(n_clusters_));

  for (int c = 0; c < n_clusters_; ++c) {
    if (k_ == 1) {
      uzz(0, 0) = azz_(c, 0);
    } else {
      uzz(0, 0) = azz_(c, 0);
      uzz(1, 0) = azz_(c, 1);
      uzz(0, 1) = azz_(c, 1);
      uzz(1, 1) = azz_(c, 2);
    }
    Eigen::MatrixXd ublock = lam.transpose() * uzz * lam;
    ublock.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> llt(ublock);
    if (llt.info() != Eigen::Success) throw FitError("random-effects block factorization failed");
    lc = llt.matrixL();
    for (int j = 0; j < k_; ++j) out.logdet_L += 2.0 * std::log(lc(j, j));
    rzx = lc.triangularView<Eigen::Lower>().solve(lam.transpose() *
                                                  azx_.middleRows(static_cast<Eigen::Index>(c) * k_, k_));
    rzy = lc.triangularView<Eigen::Lower>().solve(lam.transpose() *
                                                  azy_.segment(static_cast<Eigen::Index>(c) * k_, k_));
    out.S.noalias() -= rzx.transpose() * rzx;
    s.noalias() -= rzx.transpose() * rzy;
    lcs[static_cast<std::size_t>(c)] = lc;
    rzxs[static_cast<std::size_t>(c)] = rzx;
    rzys[static_cast<std::size_t>(c)] = rzy;
  }

  Eigen::LLT<Eigen::MatrixXd> sllt(out.S);
  if (sllt.info() != Eigen::Success)
    throw FitError("weighted cross-product is numerically singular");
  out.beta = sllt.solve(s);
  out.logdet_RX = 0.0;
  {
    const Eigen::MatrixXd lr = sllt.matrixL();
    for (int j = 0; j < q_; ++j) out.logdet_RX += 2.0 * std::log(lr(j, j));
  }

  out.u.resize(static_cast<Eigen::Index>(n_clusters_) * k_);
  double r2 = yy_ - out.beta.dot(axy_);
  for (int c = 0; c < n_clusters_; ++c) {
    const Eigen::VectorXd uc = lcs[static_cast<std::size_t>(c)]
                                   .transpose()
                                   .triangularView<Eigen::Upper>()
                                   .solve(rzys[static_cast<std::size_t>(c)] -
                                          rzxs[static_cast<std::size_t>(c)] * out.beta);
    out.u.segment(static_cast<Eigen::Index>(c) * k_, k_) = uc;
    r2 -= uc.dot(lam.transpose() * azy_.segment(static_cast<Eigen::Index>(c) * k_, k_));
  }
  out.r2 = std::max(r2, 1e-12 * std::max(yy_, 1.0));

  if (crit == Criterion::ml) {
    out.sigma2_hat = out.r2 / n_;
    out.deviance = out.logdet_L + n_ * (std::log(2.0 * kPi * out.sigma2_hat) + 1.0);
  } else {
    const double m = static_cast<double>(n_ - q_);
    out.sigma2_hat = out.r2 / m;
    out.deviance =
        out.logdet_L + out.logdet_RX + m * (std::log(2.0 * kPi * out.sigma2_hat) + 1.0);
  }
  return out;
}

double LmmProfile::deviance_at(const Eigen::VectorXd& theta, double sigma, Criterion crit) const {
  const Eval e = evaluate(theta, crit);
  const double s2 = sigma * sigma;
  const double m = crit == Criterion::ml ? static_cast<double>(n_) : static_cast<double>(n_ - q_);
  double d = e.logdet_L + m * std::log(2.0 * kPi * s2) + e.r2 / s2;
  if (crit == Criterion::reml) d += e.logdet_RX;
  return d;
}

// ---------------------------------------------------------------------------
// Non-gaussian: penalized IRLS over (beta, u) and the Laplace deviance.
// ---------------------------------------------------------------------------

namespace {

class LaplaceFitter {
public:
  LaplaceFitter(const DesignMatrices& design, Family family, RandomEffects structure)
      : d_(design), family_(family), structure_(structure), k_(re_dim(structure)),
        n_(design.n()), q_(design.q()), nc_(design.n_clusters) {
    check_structure(design, structure);
    eta_.resize(n_);
    mu_.resize(n_);
    w_.resize(n_);
    wres_.resize(n_);
    t_.resize(n_);
    xw_.resize(n_, q_);
    ylogy_.setZero(n_);
    loglik_const_ = 0.0;
    if (family == Family::poisson) {
      for (int i = 0; i < n_; ++i) {
        const double y = d_.y[i];
        ylogy_[i] = y > 0.0 ? y * std::log(y) : 0.0;
        loglik_const_ -= std::lgamma(y + 1.0);
      }
    }
    beta_.setZero(q_);
    u_.setZero(static_cast<Eigen::Index>(nc_) * k_);
    has_state_ = false;
  }

  struct Out {
    double laplace_dev = std::numeric_limits<double>::infinity();
    double penalized_dev = 0.0;
    bool converged = false;
    int iterations = 0;
  };

  // Warm-starts from the previous evaluation's (beta, u).
  Out evaluate(const Eigen::VectorXd& theta) {
    const Eigen::MatrixXd lam = lambda_from_theta(theta, k_);
    if (!has_state_) {
      for (int i = 0; i < n_; ++i) eta_[i] = eta_start(family_, d_.y[i]);
    } else {
      update_eta(lam, beta_, u_);
    }

    Out out;
    double pdev_prev = std::numeric_limits<double>::infinity();
    Eigen::VectorXd beta_new(q_), u_new(u_.size());

    for (int iter = 1; iter <= kMaxPirlsIter; ++iter) {
      out.iterations = iter;
      kernels::mu_from_eta(family_, eta_.data(), mu_.data(), static_cast<std::size_t>(n_));
      kernels::irls_weights(family_, eta_.data(), mu_.data(), d_.y.data(), w_.data(), wres_.data(),
                            static_cast<std::size_t>(n_));
      solve_augmented(lam, beta_new, u_new);

      double step = 1.0;
      double pdev = 0.0;
      for (int h = 0;; ++h) {
        const Eigen::VectorXd btry =
            has_state_ ? Eigen::VectorXd(beta_ + step * (beta_new - beta_)) : beta_new;
        const Eigen::VectorXd utry = has_state_ ? Eigen::VectorXd(u_ + step * (u_new - u_)) : u_new;
        update_eta(lam, btry, utry);
        kernels::mu_from_eta(family_, eta_.data(), mu_.data(), static_cast<std::size_t>(n_));
        pdev = kernels::deviance_sum(family_, d_.y.data(), eta_.data(), mu_.data(), ylogy_.data(),
                                     static_cast<std::size_t>(n_)) +
               utry.squaredNorm();
        if (pdev <= pdev_prev || h >= kMaxHalvings || !has_state_) {
          beta_ = btry;
          u_ = utry;
          break;
        }
        step *= 0.5;
      }
      has_state_ = true;
      if (std::abs(pdev_prev - pdev) < kPirlsRelTol * (std::abs(pdev) + 1.0)) {
        out.converged = true;
        out.penalized_dev = pdev;
        break;
      }
      pdev_prev = pdev;
      out.penalized_dev = pdev;
    }

    // Laplace deviance at the conditional mode, with weights refreshed there.
    kernels::mu_from_eta(family_, eta_.data(), mu_.data(), static_cast<std::size_t>(n_));
    kernels::irls_weights(family_, eta_.data(), mu_.data(), d_.y.data(), w_.data(), wres_.data(),
                          static_cast<std::size_t>(n_));
    double logdet = 0.0;
    assemble(lam, &logdet);
    const double loglik = kernels::loglik_sum(family_, d_.y.data(), eta_.data(), mu_.data(),
                                              static_cast<std::size_t>(n_)) +
                          loglik_const_;
    out.laplace_dev = -2.0 * loglik + u_.squaredNorm() + logdet;
    return out;
  }

  // Laplace deviance at fixed (theta, beta), optimizing the conditional
  // modes only. This is the second-stage objective of the reference
  // two-stage scheme: the outer simplex search moves (theta, beta) jointly.
  Out evaluate_joint(const Eigen::VectorXd& theta, const Eigen::VectorXd& beta) {
    const Eigen::MatrixXd lam = lambda_from_theta(theta, k_);
    if (!has_state_) u_.setZero();
    beta_ = beta;
    update_eta(lam, beta_, u_);

    Out out;
    double pdev_prev = std::numeric_limits<double>::infinity();
    Eigen::VectorXd u_new(u_.size());
    for (int iter = 1; iter <= kMaxPirlsIter; ++iter) {
      out.iterations = iter;
      kernels::mu_from_eta(family_, eta_.data(), mu_.data(), static_cast<std::size_t>(n_));
      kernels::irls_weights(family_, eta_.data(), mu_.data(), d_.y.data(), w_.data(), wres_.data(),
                            static_cast<std::size_t>(n_));
      solve_u_only(lam, u_new);

      double step = 1.0;
      double pdev = 0.0;
      for (int h = 0;; ++h) {
        const Eigen::VectorXd utry = has_state_ ? Eigen::VectorXd(u_ + step * (u_new - u_)) : u_new;
        update_eta(lam, beta_, utry);
        kernels::mu_from_eta(family_, eta_.data(), mu_.data(), static_cast<std::size_t>(n_));
        pdev = kernels::deviance_sum(family_, d_.y.data(), eta_.data(), mu_.data(), ylogy_.data(),
                                     static_cast<std::size_t>(n_)) +
               utry.squaredNorm();
        if (pdev <= pdev_prev || h >= kMaxHalvings || !has_state_) {
          u_ = utry;
          break;
        }
        step *= 0.5;
      }
      has_state_ = true;
      if (std::abs(pdev_prev - pdev) < kPirlsRelTol * (std::abs(pdev) + 1.0)) {
        out.converged = true;
        out.penalized_dev = pdev;
        break;
      }
      pdev_prev = pdev;
      out.penalized_dev = pdev;
    }

    kernels::mu_from_eta(family_, eta_.data(), mu_.data(), static_cast<std::size_t>(n_));
    kernels::irls_weights(family_, eta_.data(), mu_.data(), d_.y.data(), w_.data(), wres_.data(),
                          static_cast<std::size_t>(n_));
    double logdet = 0.0;
    assemble(lam, &logdet);
    const double loglik = kernels::loglik_sum(family_, d_.y.data(), eta_.data(), mu_.data(),
                                              static_cast<std::size_t>(n_)) +
                          loglik_const_;
    out.laplace_dev = -2.0 * loglik + u_.squaredNorm() + logdet;
    return out;
  }

  const Eigen::VectorXd& beta() const { return beta_; }
  const Eigen::VectorXd& u() const { return u_; }
  const Eigen::MatrixXd& profiled_info() const { return s_; }
  void reset_state() { has_state_ = false; }

private:
  void update_eta(const Eigen::MatrixXd& lam, const Eigen::VectorXd& beta,
                  const Eigen::VectorXd& u) {
    eta_.noalias() = d_.X * beta;
    double z[2];
    for (int c = 0; c < nc_; ++c) {
      const Eigen::VectorXd b = lam * u.segment(static_cast<Eigen::Index>(c) * k_, k_);
      const long lo = d_.cluster_start[static_cast<std::size_t>(c)];
      const long hi = d_.cluster_start[static_cast<std::size_t>(c) + 1];
      for (long i = lo; i < hi; ++i) {
        z_row(structure_, d_.subgroup_dummy[i], z);
        double add = z[0] * b[0];
        if (k_ == 2) add += z[1] * b[1];
        eta_[i] += add;
      }
    }
  }

  // Builds the augmented system at the current weights; factors stored for
  // the subsequent solve. Also returns log det of the u block when asked.
  void assemble(const Eigen::MatrixXd& lam, double* logdet) {
    t_ = w_.cwiseProduct(eta_) + wres_;
    xw_ = d_.X.array().colwise() * w_.array();
    s_.noalias() = d_.X.transpose() * xw_;
    svec_.noalias() = d_.X.transpose() * t_;

    lcs_.assign(static_cast<std::size_t>(nc_), Eigen::MatrixXd());
    rzxs_.assign(static_cast<std::size_t>(nc_), Eigen::MatrixXd());
    rzys_.assign(static_cast<std::size_t>(nc_), Eigen::VectorXd());
    azys_.assign(static_cast<std::size_t>(nc_), Eigen::VectorXd());

    double z[2];
    Eigen::MatrixXd azz(k_, k_), azx(k_, q_);
    Eigen::VectorXd azy(k_);
    if (logdet) *logdet = 0.0;
    for (int c = 0; c < nc_; ++c) {
      azz.setZero();
      azx.setZero();
      azy.setZero();
      const long lo = d_.cluster_start[static_cast<std::size_t>(c)];
      const long hi = d_.cluster_start[static_cast<std::size_t>(c) + 1];
      for (long i = lo; i < hi; ++i) {
        z_row(structure_, d_.subgroup_dummy[i], z);
        const double wi = w_[i];
        azz(0, 0) += wi * z[0] * z[0];
        azy[0] += z[0] * t_[i];
        azx.row(0) += (wi * z[0]) * d_.X.row(i);
        if (k_ == 2) {
          azz(1, 0) += wi * z[1] * z[0];
          azz(1, 1) += wi * z[1] * z[1];
          azy[1] += z[1] * t_[i];
          azx.row(1) += (wi * z[1]) * d_.X.row(i);
        }
      }
      if (k_ == 2) azz(0, 1) = azz(1, 0);

      Eigen::MatrixXd ublock = lam.transpose() * azz * lam;
      ublock.diagonal().array() += 1.0;
      Eigen::LLT<Eigen::MatrixXd> llt(ublock);
      if (llt.info() != Eigen::Success) throw FitError("random-effects block factorization failed");
      const Eigen::MatrixXd lc = llt.matrixL();
      if (logdet)
        for (int j = 0; j < k_; ++j) *logdet += 2.0 * std::log(lc(j, j));
      const Eigen::MatrixXd rzx = lc.triangularView<Eigen::Lower>().solve(lam.transpose() * azx);
      const Eigen::VectorXd rzy = lc.triangularView<Eigen::Lower>().solve(lam.transpose() * azy);
      s_.noalias() -= rzx.transpose() * rzx;
      svec_.noalias() -= rzx.transpose() * rzy;
      lcs_[static_cast<std::size_t>(c)] = lc;
      rzxs_[static_cast<std::size_t>(c)] = rzx;
      rzys_[static_cast<std::size_t>(c)] = rzy;
      azys_[static_cast<std::size_t>(c)] = azy;
    }
  }

  void solve_augmented(const Eigen::MatrixXd& lam, Eigen::VectorXd& beta_new,
                       Eigen::VectorXd& u_new) {
    assemble(lam, nullptr);
    Eigen::LLT<Eigen::MatrixXd> sllt(s_);
    if (sllt.info() != Eigen::Success)
      throw FitError("weighted cross-product is numerically singular");
    beta_new = sllt.solve(svec_);
    u_new.resize(u_.size());
    for (int c = 0; c < nc_; ++c) {
      u_new.segment(static_cast<Eigen::Index>(c) * k_, k_) =
          lcs_[static_cast<std::size_t>(c)].transpose().triangularView<Eigen::Upper>().solve(
              rzys_[static_cast<std::size_t>(c)] - rzxs_[static_cast<std::size_t>(c)] * beta_new);
    }
  }

  // Penalized WLS for u at fixed beta; per-cluster blocks are independent.
  void solve_u_only(const Eigen::MatrixXd& lam, Eigen::VectorXd& u_new) {
    t_ = w_.cwiseProduct(eta_) + wres_;
    const Eigen::VectorXd xbeta = d_.X * beta_;
    u_new.resize(u_.size());
    double z[2];
    Eigen::MatrixXd azz(k_, k_);
    Eigen::VectorXd tzu(k_);
    for (int c = 0; c < nc_; ++c) {
      azz.setZero();
      tzu.setZero();
      const long lo = d_.cluster_start[static_cast<std::size_t>(c)];
      const long hi = d_.cluster_start[static_cast<std::size_t>(c) + 1];
      for (long i = lo; i < hi; ++i) {
        z_row(structure_, d_.subgroup_dummy[i], z);
        const double wi = w_[i];
        const double ti = t_[i] - wi * xbeta[i];  // Z'W(z - X beta) row contribution
        azz(0, 0) += wi * z[0] * z[0];
        tzu[0] += z[0] * ti;
        if (k_ == 2) {
          azz(1, 0) += wi * z[1] * z[0];
          azz(1, 1) += wi * z[1] * z[1];
          tzu[1] += z[1] * ti;
        }
      }
      if (k_ == 2) azz(0, 1) = azz(1, 0);
      Eigen::MatrixXd ublock = lam.transpose() * azz * lam;
      ublock.diagonal().array() += 1.0;
      Eigen::LLT<Eigen::MatrixXd> llt(ublock);
      if (llt.info() != Eigen::Success) throw FitError("random-effects block factorization failed");
      u_new.segment(static_cast<Eigen::Index>(c) * k_, k_) = llt.solve(lam.transpose() * tzu);
    }
  }

  const DesignMatrices& d_;
  Family family_;
  RandomEffects structure_;
  int k_, n_, q_, nc_;
  double loglik_const_ = 0.0;
  Eigen::VectorXd eta_, mu_, w_, wres_, t_, ylogy_;
  Eigen::MatrixXd xw_;
  Eigen::VectorXd beta_, u_;
  Eigen::MatrixXd s_;
  Eigen::VectorXd svec_;
  std::vector<Eigen::MatrixXd> lcs_, rzxs_;
  std::vector<Eigen::VectorXd> rzys_, azys_;
  bool has_state_ = false;
};

}  // namespace

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

PirlsSolve pirls_solve(const CovarianceParams& theta, const DesignMatrices& design,
                       Family family) {
  validate_outcome(family, design.y.data(), design.n());
  PirlsSolve out;
  if (family == Family::gaussian) {
    LmmProfile profile(design, theta.structure);
    const LmmProfile::Eval e = profile.evaluate(theta.theta, Criterion::ml);
    out.beta = e.beta;
    out.u = e.u;
    out.laplace_deviance = e.deviance;
    out.converged = true;
    out.iterations = 1;
    return out;
  }
  LaplaceFitter fitter(design, family, theta.structure);
  const auto res = fitter.evaluate(theta.theta);
  if (!res.converged)
    throw FitError("PIRLS did not converge in " + std::to_string(kMaxPirlsIter) + " iterations");
  out.beta = fitter.beta();
  out.u = fitter.u();
  out.laplace_deviance = res.laplace_dev;
  out.converged = res.converged;
  out.iterations = res.iterations;
  return out;
}

double profiled_deviance(const CovarianceParams& theta, const DesignMatrices& design,
                         Family family, Criterion criterion) {
  if (criterion == Criterion::reml && family != Family::gaussian)
    throw DataError("REML is only defined for gaussian models");
  if (family == Family::gaussian) {
    LmmProfile profile(design, theta.structure);
    return profile.evaluate(theta.theta, criterion).deviance;
  }
  LaplaceFitter fitter(design, family, theta.structure);
  return fitter.evaluate(theta.theta).laplace_dev;
}

namespace {

// The deviance is even in each Cholesky diagonal (flipping the sign of a
// factor column leaves Lambda Lambda' unchanged), so the diagonal bounds can
// be folded away: search unconstrained, then map the optimum back into the
// diagonal >= 0 orthant. Boundary optima become smooth interior minima,
// which a simplex search handles far better than a projected constraint.
// Restarts with a fresh, smaller simplex guard against premature collapse;
// the total evaluation budget stays capped.
Eigen::VectorXd fold_theta(Eigen::VectorXd theta) {
  if (theta.size() == 1) {
    theta[0] = std::abs(theta[0]);
  } else {
    if (theta[0] < 0.0) {
      theta[0] = -theta[0];
      theta[1] = -theta[1];
    }
    theta[2] = std::abs(theta[2]);
  }
  return theta;
}

NelderMeadResult optimize_theta(const std::function<double(const Eigen::VectorXd&)>& f,
                                const Eigen::VectorXd& theta0, const NelderMeadOptions& opts) {
  const Eigen::Index dim = theta0.size();
  const Eigen::VectorXd lower = Eigen::VectorXd::Constant(dim, -1e6);
  const Eigen::VectorXd upper = Eigen::VectorXd::Constant(dim, 1e6);

  NelderMeadResult best;
  best.x = theta0;
  best.fmin = std::numeric_limits<double>::infinity();
  int evals = 0;
  double step = opts.initial_step;
  for (int round = 0; round < 8 && evals < opts.max_evals; ++round) {
    NelderMeadOptions o = opts;
    o.initial_step = step;
    o.max_evals = opts.max_evals - evals;
    const NelderMeadResult nm = nelder_mead(f, best.x, lower, upper, o);
    evals += nm.n_evals;
    const bool improved = nm.fmin < best.fmin - 1e-7;
    if (nm.fmin < best.fmin) {
      best.x = nm.x;
      best.fmin = nm.fmin;
      best.converged = nm.converged;
    }
    if (round > 0 && !improved) break;
    step = std::max(0.25 * step, 0.02);
  }
  best.n_evals = evals;
  best.x = fold_theta(best.x);
  return best;
}

}  // namespace

FitResult fit_glmm(const DesignMatrices& design, Family family, RandomEffects structure) {
  check_structure(design, structure);
  validate_outcome(family, design.y.data(), design.n());
  const int k = re_dim(structure);
  const int dim = k == 1 ? 1 : 3;

  Eigen::VectorXd theta0(dim);
  if (k == 1) theta0 << 1.0;
  else theta0 << 1.0, 0.0, 1.0;

  NelderMeadOptions opts;
  opts.max_evals = 10000;
  if (family == Family::gaussian) {
    opts.xtol_abs = 1e-8;
    opts.ftol_abs = 1e-10;
  } else {
    opts.xtol_abs = 1e-6;
    opts.ftol_abs = 1e-8;
  }

  FitResult fit;
  fit.family = family;
  fit.structure = structure;
  fit.n_clusters = design.n_clusters;
  fit.theta_hat.structure = structure;
  fit.theta_hat.relative_scale = family == Family::gaussian;

  if (family == Family::gaussian) {
    LmmProfile profile(design, structure);
    auto objective = [&](const Eigen::VectorXd& th) -> double {
      try {
        return profile.evaluate(th, Criterion::reml).deviance;
      } catch (const FitError&) {
        return std::numeric_limits<double>::infinity();
      }
    };
    const NelderMeadResult nm = optimize_theta(objective, theta0, opts);
    fit.n_outer_evals = nm.n_evals;
    fit.theta_hat.theta = nm.x;
    try {
      const LmmProfile::Eval e = profile.evaluate(nm.x, Criterion::reml);
      fit.beta = e.beta;
      fit.deviance = e.deviance;
      fit.sigma_resid = std::sqrt(e.sigma2_hat);
      Eigen::LLT<Eigen::MatrixXd> sllt(e.S);
      fit.vcov_beta = e.sigma2_hat *
                      sllt.solve(Eigen::MatrixXd::Identity(design.q(), design.q()));
      fit.vcov_beta = 0.5 * (fit.vcov_beta + fit.vcov_beta.transpose()).eval();
      const Eigen::MatrixXd lam = lambda_from_theta(nm.x, k);
      fit.conditional_modes.resize(design.n_clusters, k);
      for (int c = 0; c < design.n_clusters; ++c)
        fit.conditional_modes.row(c) =
            (lam * e.u.segment(static_cast<Eigen::Index>(c) * k, k)).transpose();
      fit.converged = nm.converged;
    } catch (const FitError&) {
      fit.converged = false;
    }
    fit.singular = fit.theta_hat.theta.size() > 0 && fit.theta_hat.is_singular(kSingularTol);
    return fit;
  }

  // Non-gaussian: the reference two-stage scheme. Stage one minimizes the
  // Laplace deviance over theta with beta profiled through the joint PIRLS;
  // stage two refines (theta, beta) together with a box-constrained simplex
  // search (diagonals clamped at zero) and conditional modes re-solved at
  // each point. The singular-fit behavior of the published simulation comes
  // from this second stage.
  LaplaceFitter fitter(design, family, structure);
  auto objective = [&](const Eigen::VectorXd& th) -> double {
    try {
      return fitter.evaluate(th).laplace_dev;
    } catch (const FitError&) {
      fitter.reset_state();
      return std::numeric_limits<double>::infinity();
    }
  };
  const NelderMeadResult stage1 = optimize_theta(objective, theta0, opts);
  try {
    fitter.reset_state();
    const auto res1 = fitter.evaluate(stage1.x);

    const int q = design.q();
    Eigen::VectorXd p0(dim + q), lower(dim + q), upper(dim + q);
    p0.head(dim) = stage1.x;
    p0.tail(q) = fitter.beta();
    lower.setConstant(-1e6);
    upper.setConstant(1e6);
    lower[0] = 0.0;
    if (dim == 3) lower[2] = 0.0;

    auto joint_objective = [&](const Eigen::VectorXd& p) -> double {
      try {
        return fitter.evaluate_joint(p.head(dim), p.tail(q)).laplace_dev;
      } catch (const FitError&) {
        fitter.reset_state();
        return std::numeric_limits<double>::infinity();
      }
    };
    NelderMeadOptions o2 = opts;
    o2.xtol_abs = 1e-5;
    o2.ftol_abs = 1e-5;
    o2.max_evals = std::max(100, opts.max_evals - stage1.n_evals);
    const NelderMeadResult stage2 = nelder_mead(joint_objective, p0, lower, upper, o2);

    fit.n_outer_evals = stage1.n_evals + stage2.n_evals;
    fit.theta_hat.theta = stage2.x.head(dim);
    const auto res2 = fitter.evaluate_joint(stage2.x.head(dim), stage2.x.tail(q));
    fit.beta = fitter.beta();
    fit.deviance = res2.laplace_dev;
    fit.sigma_resid = 1.0;
    Eigen::LLT<Eigen::MatrixXd> sllt(fitter.profiled_info());
    fit.vcov_beta = sllt.solve(Eigen::MatrixXd::Identity(q, q));
    fit.vcov_beta = 0.5 * (fit.vcov_beta + fit.vcov_beta.transpose()).eval();
    const Eigen::MatrixXd lam = lambda_from_theta(fit.theta_hat.theta, k);
    fit.conditional_modes.resize(design.n_clusters, k);
    for (int c = 0; c < design.n_clusters; ++c)
      fit.conditional_modes.row(c) =
          (lam * fitter.u().segment(static_cast<Eigen::Index>(c) * k, k)).transpose();
    fit.converged = stage1.converged && stage2.converged && res1.converged && res2.converged;
  } catch (const FitError&) {
    fit.converged = false;
    fit.theta_hat.theta = stage1.x;
    fit.n_outer_evals = stage1.n_evals;
  }
  fit.singular = fit.theta_hat.theta.size() > 0 && fit.theta_hat.is_singular(kSingularTol);
  return fit;
}

std::pair<FitResult, bool> fit_two_step(const DesignMatrices& design, Family family) {
  const FitResult flexible = fit_glmm(design, family, RandomEffects::subgroup_within_cluster);
  if (flexible.converged && !flexible.singular) return {flexible, false};
  const FitResult standard = fit_glmm(design, family, RandomEffects::cluster_intercept);
  if (!standard.converged && !flexible.converged)
    throw FitError("both the flexible and the standard GLMM fits failed");
  return {standard, true};
}

Eigen::Matrix2d implied_subgroup_cov(const FitResult& fit) {
  const double scale = fit.theta_hat.relative_scale ? fit.sigma_resid * fit.sigma_resid : 1.0;
  if (fit.structure == RandomEffects::cluster_intercept) {
    const double v = scale * fit.theta_hat.theta[0] * fit.theta_hat.theta[0];
    return Eigen::Matrix2d::Constant(v);
  }
  const Eigen::Matrix2d L = fit.theta_hat.lambda();
  const Eigen::Matrix2d sigma_b = scale * (L * L.transpose());
  if (fit.structure == RandomEffects::subgroup_intercepts) return sigma_b;
  // intercept+slope: U_0 = b_0, U_1 = b_0 + b_1
  Eigen::Matrix2d m;
  m << 1.0, 0.0, 1.0, 1.0;
  return m * sigma_b * m.transpose();
}

DesignMatrices with_outcome(const DesignMatrices& design, const Eigen::VectorXd& y) {
  if (y.size() != design.y.size()) throw DataError("outcome length mismatch");
  DesignMatrices d = design;
  d.y = y;
  return d;
}

}  // namespace hetfx
