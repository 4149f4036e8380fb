#include "oracles.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

namespace hetfx::oracles {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Eigen::VectorXd glm_newton(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family) {
  const Eigen::Index n = X.rows(), q = X.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);

  auto loglik = [&](const Eigen::VectorXd& b) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double eta = X.row(i).dot(b);
      switch (family) {
        case Family::gaussian: ll += -0.5 * (y[i] - eta) * (y[i] - eta); break;
        case Family::poisson: ll += y[i] * eta - std::exp(eta); break;
        case Family::bernoulli: {
          const double sp = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
          ll += y[i] * eta - sp;
          break;
        }
      }
    }
    return ll;
  };

  double ll = loglik(beta);
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::VectorXd score = Eigen::VectorXd::Zero(q);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(q, q);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double eta = X.row(i).dot(beta);
      const double mu = inverse_link(family, eta);
      const double w = family == Family::gaussian ? 1.0 : variance_function(family, mu);
      score += X.row(i).transpose() * (y[i] - mu);
      hess += X.row(i).transpose() * X.row(i) * w;
    }
    const Eigen::VectorXd dir = hess.ldlt().solve(score);
    if (dir.cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, beta.cwiseAbs().maxCoeff())) break;
    double step = 1.0;
    const double noise = 1e-12 * (std::abs(ll) + 1.0);
    for (int h = 0; h < 30; ++h) {
      const double lt = loglik(beta + step * dir);
      if (lt >= ll - noise) {
        beta += step * dir;
        ll = lt;
        break;
      }
      step *= 0.5;
    }
  }
  return beta;
}

double aghq_poisson_deviance(const DesignMatrices& design, const Eigen::VectorXd& beta,
                             double sd_b, int n_nodes) {
  // Gauss-Hermite nodes/weights (weight e^{-x^2}) via Golub-Welsch.
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n_nodes, n_nodes);
  for (int k = 1; k < n_nodes; ++k) {
    const double b = std::sqrt(k / 2.0);
    jac(k, k - 1) = b;
    jac(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  const Eigen::VectorXd nodes = es.eigenvalues();
  Eigen::VectorXd weights(n_nodes);
  for (int k = 0; k < n_nodes; ++k) {
    const double v0 = es.eigenvectors()(0, k);
    weights[k] = std::sqrt(kPi) * v0 * v0;
  }

  const Eigen::VectorXd eta0 = design.X * beta;
  double dev = 0.0;
  for (int c = 0; c < design.n_clusters; ++c) {
    const long lo = design.cluster_start[static_cast<std::size_t>(c)];
    const long hi = design.cluster_start[static_cast<std::size_t>(c) + 1];

    // h(b) = sum_j [y eta - exp(eta) - lgamma(y+1)] + log phi(b; 0, sd_b^2)
    auto h = [&](double b) {
      double v = -0.5 * std::log(2.0 * kPi * sd_b * sd_b) - 0.5 * b * b / (sd_b * sd_b);
      for (long i = lo; i < hi; ++i) {
        const double eta = eta0[i] + b;
        v += design.y[i] * eta - std::exp(eta) - std::lgamma(design.y[i] + 1.0);
      }
      return v;
    };
    // Newton for the mode of h
    double bm = 0.0;
    for (int it = 0; it < 100; ++it) {
      double g = -bm / (sd_b * sd_b), hh = -1.0 / (sd_b * sd_b);
      for (long i = lo; i < hi; ++i) {
        const double lam = std::exp(eta0[i] + bm);
        g += design.y[i] - lam;
        hh -= lam;
      }
      const double step = -g / hh;
      bm += step;
      if (std::abs(step) < 1e-12) break;
    }
    double curv = 1.0 / (sd_b * sd_b);
    for (long i = lo; i < hi; ++i) curv += std::exp(eta0[i] + bm);
    const double shat = 1.0 / std::sqrt(curv);

    // log I = log sum_k w_k exp(h(bm + sqrt2 s x_k) + x_k^2) + log(sqrt2 s)
    const double hmax = h(bm);
    double acc = 0.0;
    for (int k = 0; k < n_nodes; ++k) {
      const double x = nodes[k];
      acc += weights[k] * std::exp(h(bm + std::sqrt(2.0) * shat * x) - hmax + x * x);
    }
    dev += -2.0 * (hmax + std::log(std::sqrt(2.0) * shat * acc));
  }
  return dev;
}

MvnDeviance mvn_profiled_deviance(const DesignMatrices& design, RandomEffects structure,
                                  const Eigen::VectorXd& theta) {
  const int n = design.n();
  const int q = design.q();
  const int k = structure == RandomEffects::cluster_intercept ? 1 : 2;

  Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(k, k);
  if (k == 1) {
    lam(0, 0) = theta[0];
  } else {
    lam(0, 0) = theta[0];
    lam(1, 0) = theta[1];
    lam(1, 1) = theta[2];
  }

  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, design.n_clusters * k);
  for (int i = 0; i < n; ++i) {
    const int c = design.cluster[static_cast<std::size_t>(i)];
    const double s = design.subgroup_dummy[i];
    if (k == 1) {
      Z(i, c) = 1.0;
    } else if (structure == RandomEffects::subgroup_intercepts) {
      Z(i, 2 * c) = 1.0 - s;
      Z(i, 2 * c + 1) = s;
    } else {
      Z(i, 2 * c) = 1.0;
      Z(i, 2 * c + 1) = s;
    }
  }
  Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(design.n_clusters * k, design.n_clusters * k);
  const Eigen::MatrixXd block = lam * lam.transpose();
  for (int c = 0; c < design.n_clusters; ++c) gamma.block(c * k, c * k, k, k) = block;

  const Eigen::MatrixXd v0 =
      Eigen::MatrixXd::Identity(n, n) + Z * gamma * Z.transpose();
  const Eigen::LLT<Eigen::MatrixXd> vllt(v0);
  const Eigen::MatrixXd vinv = vllt.solve(Eigen::MatrixXd::Identity(n, n));
  double logdet_v = 0.0;
  {
    const Eigen::MatrixXd l = vllt.matrixL();
    for (int i = 0; i < n; ++i) logdet_v += 2.0 * std::log(l(i, i));
  }

  const Eigen::MatrixXd xtvx = design.X.transpose() * vinv * design.X;
  const Eigen::VectorXd beta = xtvx.llt().solve(design.X.transpose() * vinv * design.y);
  const Eigen::VectorXd r = design.y - design.X * beta;
  const double quad = r.dot(vinv * r);

  MvnDeviance out;
  out.ml = logdet_v + n * (std::log(2.0 * kPi * quad / n) + 1.0);
  double logdet_x = 0.0;
  {
    const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(xtvx).matrixL();
    for (int j = 0; j < q; ++j) logdet_x += 2.0 * std::log(l(j, j));
  }
  const double m = n - q;
  out.reml = logdet_v + logdet_x + m * (std::log(2.0 * kPi * quad / m) + 1.0);
  return out;
}

AnovaReml balanced_anova_reml(const Eigen::VectorXd& y, int n_clusters, int cluster_size,
                              const std::vector<int>& arm) {
  const int m = cluster_size;
  int n_arms = 1;
  for (int a : arm) n_arms = std::max(n_arms, a + 1);

  Eigen::VectorXd cmean = Eigen::VectorXd::Zero(n_clusters);
  for (int c = 0; c < n_clusters; ++c)
    cmean[c] = y.segment(static_cast<Eigen::Index>(c) * m, m).mean();

  Eigen::VectorXd amean = Eigen::VectorXd::Zero(n_arms);
  Eigen::VectorXi acount = Eigen::VectorXi::Zero(n_arms);
  for (int c = 0; c < n_clusters; ++c) {
    amean[arm[static_cast<std::size_t>(c)]] += cmean[c];
    acount[arm[static_cast<std::size_t>(c)]] += 1;
  }
  for (int a = 0; a < n_arms; ++a) amean[a] /= acount[a];

  double ssb = 0.0;
  for (int c = 0; c < n_clusters; ++c) {
    const double d = cmean[c] - amean[arm[static_cast<std::size_t>(c)]];
    ssb += d * d;
  }
  double ssw = 0.0;
  for (int c = 0; c < n_clusters; ++c)
    for (int j = 0; j < m; ++j) {
      const double d = y[static_cast<Eigen::Index>(c) * m + j] - cmean[c];
      ssw += d * d;
    }

  AnovaReml out;
  out.ms_between = m * ssb / (n_clusters - n_arms);
  out.ms_within = ssw / (static_cast<double>(n_clusters) * (m - 1));
  out.sigma2_e = out.ms_within;
  out.sigma2_b = (out.ms_between - out.ms_within) / m;
  return out;
}

DesignMatrices raw_design(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          const std::vector<int>& cluster, const Eigen::VectorXd& subgroup_dummy) {
  DesignMatrices d;
  d.X = X;
  d.y = y;
  d.cluster = cluster;
  d.subgroup_dummy = subgroup_dummy;
  d.p_levels = 2;
  d.n_clusters = 0;
  for (int c : cluster) d.n_clusters = std::max(d.n_clusters, c + 1);
  d.cluster_start.assign(static_cast<std::size_t>(d.n_clusters) + 1, 0);
  for (int c : cluster) ++d.cluster_start[static_cast<std::size_t>(c) + 1];
  for (int c = 0; c < d.n_clusters; ++c)
    d.cluster_start[static_cast<std::size_t>(c) + 1] += d.cluster_start[static_cast<std::size_t>(c)];
  d.between_col.assign(static_cast<std::size_t>(X.cols()), true);
  for (int c = 0; c < d.n_clusters; ++c) {
    const long lo = d.cluster_start[static_cast<std::size_t>(c)];
    const long hi = d.cluster_start[static_cast<std::size_t>(c) + 1];
    for (Eigen::Index j = 0; j < X.cols(); ++j)
      for (long i = lo + 1; i < hi; ++i)
        if (X(i, j) != X(lo, j)) d.between_col[static_cast<std::size_t>(j)] = false;
  }
  d.q_between = 0;
  for (bool b : d.between_col) d.q_between += b ? 1 : 0;
  d.q_within = static_cast<int>(X.cols()) - d.q_between;
  d.col_names.resize(static_cast<std::size_t>(X.cols()), "x");
  return d;
}

}  // namespace hetfx::oracles
