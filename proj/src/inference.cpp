#include "hetfx/inference.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "hetfx/errors.hpp"
#include "hetfx/rng.hpp"

namespace hetfx {

const char* df_method_name(DfMethod m) {
  switch (m) {
    case DfMethod::normal: return "normal";
    case DfMethod::satterthwaite: return "satterthwaite";
    case DfMethod::between_within: return "between-within";
    case DfMethod::n_minus_p: return "n-minus-p";
    case DfMethod::bootstrap: return "bootstrap";
    case DfMethod::fay_graubard: return "fay-graubard";
  }
  return "?";
}

double normal_cdf(double x) {
  static const boost::math::normal_distribution<double> d(0.0, 1.0);
  return boost::math::cdf(d, x);
}

double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> d(0.0, 1.0);
  return boost::math::quantile(d, p);
}

double t_cdf(double x, double df) {
  const boost::math::students_t_distribution<double> d(df);
  return boost::math::cdf(d, x);
}

double t_quantile(double p, double df) {
  const boost::math::students_t_distribution<double> d(df);
  return boost::math::quantile(d, p);
}

double chisq_cdf(double x, double df) {
  const boost::math::chi_squared_distribution<double> d(df);
  return boost::math::cdf(d, x);
}

namespace {

// p-value and CI for a scalar estimate against normal or t(df).
void finish_scalar_test(HTETest& t, std::optional<double> df) {
  const double a = t.alpha;
  if (df) {
    t.df = df;
    t.p_value = 2.0 * (1.0 - t_cdf(std::abs(t.statistic), *df));
    const double crit = t_quantile(1.0 - a / 2.0, *df);
    t.ci_low = t.estimate - crit * t.se;
    t.ci_high = t.estimate + crit * t.se;
  } else {
    t.p_value = 2.0 * (1.0 - normal_cdf(std::abs(t.statistic)));
    const double crit = normal_quantile(1.0 - a / 2.0);
    t.ci_low = t.estimate - crit * t.se;
    t.ci_high = t.estimate + crit * t.se;
  }
}

Eigen::VectorXd unit_contrast(int q, int col) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(q);
  c[col] = 1.0;
  return c;
}

}  // namespace

SatterthwaiteResult satterthwaite_df(const FitResult& fit, const DesignMatrices& design,
                                     const Eigen::VectorXd& contrast) {
  if (fit.family != Family::gaussian)
    throw DataError("satterthwaite correction requires a gaussian REML fit");
  SatterthwaiteResult fallback{static_cast<double>(design.n_clusters) - 2.0, true};

  const LmmProfile profile(design, fit.structure);
  const int dim = static_cast<int>(fit.theta_hat.theta.size());
  const int np = dim + 1;
  Eigen::VectorXd p0(np);
  p0.head(dim) = fit.theta_hat.theta;
  p0[dim] = fit.sigma_resid;

  auto vfun = [&](const Eigen::VectorXd& p) -> double {
    const LmmProfile::Eval e = profile.evaluate(p.head(dim), Criterion::reml);
    Eigen::LLT<Eigen::MatrixXd> llt(e.S);
    if (llt.info() != Eigen::Success) throw FitError("profiled information not PD");
    const double s2 = p[dim] * p[dim];
    return s2 * contrast.dot(llt.solve(contrast));
  };
  auto devfun = [&](const Eigen::VectorXd& p) -> double {
    return profile.deviance_at(p.head(dim), p[dim], Criterion::reml);
  };

  try {
    Eigen::VectorXd h(np);
    for (int j = 0; j < np; ++j) h[j] = 1e-4 * std::max(std::abs(p0[j]), 1.0);

    const double f0 = vfun(p0);
    Eigen::VectorXd grad(np);
    for (int j = 0; j < np; ++j) {
      Eigen::VectorXd pp = p0, pm = p0;
      pp[j] += h[j];
      pm[j] -= h[j];
      grad[j] = (vfun(pp) - vfun(pm)) / (2.0 * h[j]);
    }

    const double d0 = devfun(p0);
    Eigen::MatrixXd hess(np, np);
    for (int i = 0; i < np; ++i) {
      for (int j = i; j < np; ++j) {
        if (i == j) {
          Eigen::VectorXd pp = p0, pm = p0;
          pp[i] += h[i];
          pm[i] -= h[i];
          hess(i, i) = (devfun(pp) - 2.0 * d0 + devfun(pm)) / (h[i] * h[i]);
        } else {
          Eigen::VectorXd ppp = p0, ppm = p0, pmp = p0, pmm = p0;
          ppp[i] += h[i]; ppp[j] += h[j];
          ppm[i] += h[i]; ppm[j] -= h[j];
          pmp[i] -= h[i]; pmp[j] += h[j];
          pmm[i] -= h[i]; pmm[j] -= h[j];
          hess(i, j) = hess(j, i) =
              (devfun(ppp) - devfun(ppm) - devfun(pmp) + devfun(pmm)) / (4.0 * h[i] * h[j]);
        }
      }
    }

    Eigen::LLT<Eigen::MatrixXd> hllt(hess);
    if (hllt.info() != Eigen::Success) return fallback;
    const Eigen::MatrixXd vcov_params =
        2.0 * hllt.solve(Eigen::MatrixXd::Identity(np, np));
    const double var_f = grad.dot(vcov_params * grad);
    if (!(var_f > 0.0) || !std::isfinite(var_f)) return fallback;
    const double df = 2.0 * f0 * f0 / var_f;
    if (!std::isfinite(df)) return fallback;
    return {std::max(df, 1.0), false};
  } catch (const FitError&) {
    return fallback;
  }
}

double between_within_df(const DesignMatrices& design, const Eigen::VectorXd& contrast) {
  bool between_only = true;
  for (int j = 0; j < design.q(); ++j)
    if (contrast[j] != 0.0 && !design.between_col[static_cast<std::size_t>(j)]) {
      between_only = false;
      break;
    }
  const double df = between_only
                        ? static_cast<double>(design.n_clusters - design.q_between)
                        : static_cast<double>(design.n() - design.n_clusters - design.q_within);
  if (df <= 0.0) throw DataError("between-within degrees of freedom are not positive");
  return df;
}

double n_minus_p_df(const DesignMatrices& design) {
  const double df = static_cast<double>(design.n_clusters - design.q_between);
  if (df <= 0.0) throw DataError("cluster-level degrees of freedom are not positive");
  return df;
}

double BootstrapCi::percentile(const std::vector<double>& draws, double p) const {
  std::vector<double> s = draws;
  std::sort(s.begin(), s.end());
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = (static_cast<double>(s.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

BootstrapCi parametric_bootstrap_ci(const FitResult& fit, const DesignMatrices& design,
                                    Family family, int B, std::uint64_t seed, double alpha) {
  if (!fit.converged) throw FitError("bootstrap requires a converged fit");
  const int k = fit.theta_hat.dim();
  const Eigen::Matrix2d lam = fit.theta_hat.lambda();
  const double re_scale = fit.theta_hat.relative_scale ? fit.sigma_resid : 1.0;
  const Eigen::VectorXd eta0 = [&] {
    Eigen::VectorXd e = design.X * fit.beta;
    return e;
  }();

  BootstrapCi out;
  out.estimates.reserve(static_cast<std::size_t>(B));
  std::vector<Eigen::VectorXd> betas;
  const int icol = design.interaction_col();

  for (int b = 0; b < B; ++b) {
    Rng rng(Rng::substream(seed, static_cast<std::uint64_t>(b)));
    Eigen::VectorXd ystar(design.n());
    for (int c = 0; c < design.n_clusters; ++c) {
      Eigen::Vector2d u = Eigen::Vector2d::Zero();
      u[0] = rng.normal();
      if (k == 2) u[1] = rng.normal();
      const Eigen::Vector2d bc = re_scale * (lam * u);
      const long lo = design.cluster_start[static_cast<std::size_t>(c)];
      const long hi = design.cluster_start[static_cast<std::size_t>(c) + 1];
      for (long i = lo; i < hi; ++i) {
        double re = bc[0];
        if (k == 2) {
          const double s = design.subgroup_dummy[i];
          re = fit.structure == RandomEffects::subgroup_intercepts
                   ? (1.0 - s) * bc[0] + s * bc[1]
                   : bc[0] + s * bc[1];
        }
        const double eta = eta0[i] + re;
        switch (family) {
          case Family::gaussian: ystar[i] = eta + rng.normal(0.0, fit.sigma_resid); break;
          case Family::poisson: ystar[i] = static_cast<double>(rng.poisson(std::exp(eta))); break;
          case Family::bernoulli:
            ystar[i] = rng.bernoulli(inverse_link(Family::bernoulli, eta)) ? 1.0 : 0.0;
            break;
        }
      }
    }
    try {
      const DesignMatrices dstar = with_outcome(design, ystar);
      const FitResult refit = fit_glmm(dstar, family, fit.structure);
      if (!refit.converged) {
        ++out.n_failed;
        continue;
      }
      if (refit.singular) ++out.n_singular_boot;
      out.estimates.push_back(refit.beta[icol]);
      betas.push_back(refit.beta);
    } catch (const FitError&) {
      ++out.n_failed;
    } catch (const DataError&) {
      ++out.n_failed;
    }
  }

  if (out.n_failed * 2 > B)
    throw FitError("more than half of the bootstrap refits failed (" +
                   std::to_string(out.n_failed) + " of " + std::to_string(B) + ")");

  out.beta_draws.resize(static_cast<Eigen::Index>(betas.size()), design.q());
  for (std::size_t i = 0; i < betas.size(); ++i) out.beta_draws.row(static_cast<Eigen::Index>(i)) = betas[i];
  out.ci_low = out.percentile(out.estimates, alpha / 2.0);
  out.ci_high = out.percentile(out.estimates, 1.0 - alpha / 2.0);
  return out;
}

HTETest wald_interaction_test(const FitResult& fit, const DesignMatrices& design, DfMethod method,
                              double alpha, const BootstrapCi* boot) {
  if (!fit.converged) throw FitError("interaction test requires a converged fit");
  HTETest t;
  t.alpha = alpha;
  t.method = method;

  if (design.p_levels > 2) {
    if (method != DfMethod::normal)
      throw DataError("p > 2 interaction tests support the normal (chi-square) method only");
    const int nint = design.p_levels - 1;
    const int first = design.interaction_col(1);
    const Eigen::VectorXd bblk = fit.beta.segment(first, nint);
    const Eigen::MatrixXd vblk = fit.vcov_beta.block(first, first, nint, nint);
    t.estimate = std::numeric_limits<double>::quiet_NaN();
    t.se = std::numeric_limits<double>::quiet_NaN();
    t.statistic = bblk.dot(vblk.llt().solve(bblk));
    t.df = static_cast<double>(nint);
    t.p_value = 1.0 - chisq_cdf(t.statistic, static_cast<double>(nint));
    t.ci_low = t.ci_high = std::numeric_limits<double>::quiet_NaN();
    return t;
  }

  const int icol = design.interaction_col();
  t.estimate = fit.beta[icol];
  t.se = std::sqrt(fit.vcov_beta(icol, icol));
  t.statistic = t.estimate / t.se;
  const Eigen::VectorXd c = unit_contrast(design.q(), icol);

  switch (method) {
    case DfMethod::normal:
      finish_scalar_test(t, std::nullopt);
      break;
    case DfMethod::satterthwaite: {
      const SatterthwaiteResult s = satterthwaite_df(fit, design, c);
      t.df_fallback = s.fallback;
      finish_scalar_test(t, s.df);
      break;
    }
    case DfMethod::between_within:
      finish_scalar_test(t, between_within_df(design, c));
      break;
    case DfMethod::n_minus_p:
      finish_scalar_test(t, n_minus_p_df(design));
      break;
    case DfMethod::bootstrap: {
      if (!boot) throw DataError("bootstrap method needs precomputed bootstrap draws");
      t.ci_low = boot->ci_low;
      t.ci_high = boot->ci_high;
      t.p_value = std::nullopt;
      t.df = std::nullopt;
      break;
    }
    case DfMethod::fay_graubard:
      throw DataError("fay-graubard applies to GEE fits only");
  }
  return t;
}

HTETest wald_interaction_test_gee(const GeeFitResult& fit, const DesignMatrices& design,
                                  Family family, DfMethod method, double alpha) {
  if (!fit.converged) throw FitError("interaction test requires a converged fit");
  if (method != DfMethod::normal && method != DfMethod::fay_graubard)
    throw DataError(std::string("GEE supports the normal and fay-graubard methods, not ") +
                    df_method_name(method));
  HTETest t;
  t.alpha = alpha;
  t.method = method;
  const int icol = design.interaction_col();
  const double nm2 = static_cast<double>(design.n_clusters) - 2.0;

  if (method == DfMethod::normal) {
    t.estimate = fit.beta[icol];
    t.se = std::sqrt(fit.vcov_robust(icol, icol));
    t.statistic = t.estimate / t.se;
    finish_scalar_test(t, std::nullopt);
    return t;
  }

  const FayGraubard fg = fay_graubard_adjust(fit, design, family);
  t.estimate = fit.beta[icol];
  if (fg.applicable) {
    t.se = std::sqrt(fg.vcov_fg(icol, icol));
    t.statistic = t.estimate / t.se;
    finish_scalar_test(t, std::min(fg.df_interaction, nm2));
  } else {
    // mirror the data-application fallback: robust SE with N - 2 df
    t.df_fallback = true;
    t.se = std::sqrt(fit.vcov_robust(icol, icol));
    t.statistic = t.estimate / t.se;
    finish_scalar_test(t, nm2);
  }
  return t;
}

namespace {

SubgroupEffect make_effect(int level, double est, double se, std::optional<double> df,
                           double alpha) {
  SubgroupEffect e;
  e.level = level;
  e.estimate = est;
  e.se = se;
  e.df = df;
  const double crit = df ? t_quantile(1.0 - alpha / 2.0, *df) : normal_quantile(1.0 - alpha / 2.0);
  e.ci_low = est - crit * se;
  e.ci_high = est + crit * se;
  return e;
}

}  // namespace

SubgroupEffects subgroup_effects(const FitResult& fit, const DesignMatrices& design,
                                 DfMethod method, double alpha, const BootstrapCi* boot) {
  if (!fit.converged) throw FitError("subgroup effects require a converged fit");
  SubgroupEffects out;
  out.method = method;
  out.alpha = alpha;
  const int q = design.q();
  for (int g = 0; g < design.p_levels; ++g) {
    Eigen::VectorXd c = unit_contrast(q, design.treatment_col());
    if (g > 0) c[design.interaction_col(g)] = 1.0;
    const double est = c.dot(fit.beta);
    const double se = std::sqrt(c.dot(fit.vcov_beta * c));
    std::optional<double> df;
    switch (method) {
      case DfMethod::normal: break;
      case DfMethod::satterthwaite: df = satterthwaite_df(fit, design, c).df; break;
      case DfMethod::between_within: df = between_within_df(design, c); break;
      case DfMethod::n_minus_p: df = n_minus_p_df(design); break;
      case DfMethod::bootstrap: {
        if (!boot) throw DataError("bootstrap method needs precomputed bootstrap draws");
        std::vector<double> draws;
        draws.reserve(static_cast<std::size_t>(boot->beta_draws.rows()));
        for (Eigen::Index r = 0; r < boot->beta_draws.rows(); ++r)
          draws.push_back(c.dot(boot->beta_draws.row(r)));
        SubgroupEffect e;
        e.level = g;
        e.estimate = est;
        e.se = se;
        e.ci_low = boot->percentile(draws, alpha / 2.0);
        e.ci_high = boot->percentile(draws, 1.0 - alpha / 2.0);
        out.effects.push_back(e);
        continue;
      }
      case DfMethod::fay_graubard:
        throw DataError("fay-graubard applies to GEE fits only");
    }
    out.effects.push_back(make_effect(g, est, se, df, alpha));
  }
  return out;
}

SubgroupEffects subgroup_effects_gee(const GeeFitResult& fit, const DesignMatrices& design,
                                     Family family, DfMethod method, double alpha) {
  if (!fit.converged) throw FitError("subgroup effects require a converged fit");
  if (method != DfMethod::normal && method != DfMethod::fay_graubard)
    throw DataError("GEE supports the normal and fay-graubard methods only");
  SubgroupEffects out;
  out.method = method;
  out.alpha = alpha;
  const double nm2 = static_cast<double>(design.n_clusters) - 2.0;
  FayGraubard fg;
  if (method == DfMethod::fay_graubard) fg = fay_graubard_adjust(fit, design, family);
  const Eigen::MatrixXd& vcov = fg.applicable ? fg.vcov_fg : fit.vcov_robust;
  for (int g = 0; g < design.p_levels; ++g) {
    Eigen::VectorXd c = unit_contrast(design.q(), design.treatment_col());
    if (g > 0) c[design.interaction_col(g)] = 1.0;
    const double est = c.dot(fit.beta);
    const double se = std::sqrt(c.dot(vcov * c));
    std::optional<double> df;
    if (method == DfMethod::fay_graubard)
      df = fg.applicable ? std::min(fg.df_for(c), nm2) : nm2;
    out.effects.push_back(make_effect(g, est, se, df, alpha));
  }
  return out;
}

DfMethod select_correction(ModelKind kind, Family family, int n_clusters,
                           bool assume_flexible_truth) {
  if (n_clusters > kSmallClusterThreshold) return DfMethod::normal;
  if (kind == ModelKind::gee) return DfMethod::fay_graubard;
  if (family == Family::gaussian) return DfMethod::satterthwaite;
  if (kind == ModelKind::flexible)
    return assume_flexible_truth
               ? (family == Family::poisson ? DfMethod::between_within : DfMethod::n_minus_p)
               : DfMethod::bootstrap;
  return assume_flexible_truth ? DfMethod::n_minus_p : DfMethod::between_within;
}

}  // namespace hetfx
