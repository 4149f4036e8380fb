#include "hetfx/neldermead.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace hetfx {

namespace {

inline void project(Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = std::min(hi[i], std::max(lo[i], x[i]));
}

}  // namespace

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
                             const Eigen::VectorXd& upper, const NelderMeadOptions& opts) {
  const Eigen::Index d = x0.size();
  NelderMeadResult res;
  res.n_evals = 0;

  auto eval = [&](Eigen::VectorXd& x) {
    project(x, lower, upper);
    ++res.n_evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(d) + 1);
  std::vector<double> fv(static_cast<std::size_t>(d) + 1);
  pts[0] = x0;
  fv[0] = eval(pts[0]);
  for (Eigen::Index i = 0; i < d; ++i) {
    Eigen::VectorXd p = pts[0];
    double step = opts.initial_step * std::max(1.0, std::abs(p[i]));
    if (p[i] + step > upper[i]) step = -step;  // step into the box
    p[i] += step;
    pts[static_cast<std::size_t>(i) + 1] = p;
    fv[static_cast<std::size_t>(i) + 1] = eval(pts[static_cast<std::size_t>(i) + 1]);
  }

  const double alpha = 1.0, gamma = 2.0, beta = 0.5, delta = 0.5;
  std::vector<std::size_t> order(pts.size());

  while (res.n_evals < opts.max_evals) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front(), worst = order.back();
    const std::size_t second_worst = order[order.size() - 2];

    double xspread = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      xspread = std::max(xspread, (pts[i] - pts[best]).cwiseAbs().maxCoeff());
    const double fspread = fv[worst] - fv[best];
    if (xspread < opts.xtol_abs && fspread < opts.ftol_abs) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(d);

    Eigen::VectorXd xr = centroid + alpha * (centroid - pts[worst]);
    const double fr = eval(xr);
    if (fr < fv[best]) {
      Eigen::VectorXd xe = centroid + gamma * (centroid - pts[worst]);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        fv[worst] = fe;
      } else {
        pts[worst] = xr;
        fv[worst] = fr;
      }
    } else if (fr < fv[second_worst]) {
      pts[worst] = xr;
      fv[worst] = fr;
    } else {
      const bool outside = fr < fv[worst];
      Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + beta * (xr - centroid))
                                   : Eigen::VectorXd(centroid - beta * (centroid - pts[worst]));
      const double fc = eval(xc);
      if (fc < std::min(fr, fv[worst])) {
        pts[worst] = xc;
        fv[worst] = fc;
      } else {
        for (std::size_t i = 0; i < pts.size(); ++i) {
          if (i == best) continue;
          pts[i] = pts[best] + delta * (pts[i] - pts[best]);
          fv[i] = eval(pts[i]);
          if (res.n_evals >= opts.max_evals) break;
        }
      }
    }
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (fv[i] < fv[best]) best = i;
  res.x = pts[best];
  res.fmin = fv[best];
  return res;
}

}  // namespace hetfx
