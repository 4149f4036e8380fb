#include "hetfx/design.hpp"

#include <Eigen/QR>

#include "hetfx/errors.hpp"

namespace hetfx {

DesignMatrices build_design(const Dataset& data, const ModelSpec& spec) {
  const int p = data.subgroup_levels;
  if (p < 2) throw DataError("subgroup factor needs at least 2 levels, got " + std::to_string(p));
  const long n = static_cast<long>(data.rows.size());
  const int n_cov = static_cast<int>(spec.extra_covariates.size());
  const int q = 1 + 1 + (p - 1) + (spec.include_interaction ? p - 1 : 0) + n_cov;

  // Every treatment x subgroup cell must be populated, otherwise the
  // interaction design cannot have full rank.
  std::vector<int> cell(static_cast<std::size_t>(2 * p), 0);
  for (const Subject& s : data.rows) ++cell[static_cast<std::size_t>(s.treatment * p + s.subgroup)];
  for (int t = 0; t < 2; ++t)
    for (int g = 0; g < p; ++g)
      if (cell[static_cast<std::size_t>(t * p + g)] == 0)
        throw DataError("empty treatment=" + std::to_string(t) + " x subgroup=" + std::to_string(g) +
                        " cell: design is rank-deficient");

  DesignMatrices d;
  d.X.resize(n, q);
  d.y.resize(n);
  d.subgroup_dummy.resize(n);
  d.cluster.resize(static_cast<std::size_t>(n));
  d.n_clusters = data.n_clusters;
  d.p_levels = p;

  d.col_names = {"(Intercept)", "treatment"};
  for (int g = 1; g < p; ++g) d.col_names.push_back("subgroup" + std::to_string(g));
  if (spec.include_interaction)
    for (int g = 1; g < p; ++g) d.col_names.push_back("treatment:subgroup" + std::to_string(g));
  for (int k : spec.extra_covariates) {
    if (k < 0 || k >= static_cast<int>(data.covariate_names.size()))
      throw DataError("covariate index " + std::to_string(k) + " out of range");
    d.col_names.push_back(data.covariate_names[static_cast<std::size_t>(k)]);
  }

  for (long i = 0; i < n; ++i) {
    const Subject& s = data.rows[static_cast<std::size_t>(i)];
    d.y[i] = s.outcome;
    d.cluster[static_cast<std::size_t>(i)] = s.cluster_id;
    d.subgroup_dummy[i] = s.subgroup != 0 ? 1.0 : 0.0;
    int c = 0;
    d.X(i, c++) = 1.0;
    d.X(i, c++) = static_cast<double>(s.treatment);
    for (int g = 1; g < p; ++g) d.X(i, c++) = s.subgroup == g ? 1.0 : 0.0;
    if (spec.include_interaction)
      for (int g = 1; g < p; ++g) d.X(i, c++) = (s.treatment == 1 && s.subgroup == g) ? 1.0 : 0.0;
    for (int k : spec.extra_covariates) d.X(i, c++) = s.covariates[static_cast<std::size_t>(k)];
  }

  // Rows arrive sorted by cluster (Dataset canonical order): record offsets.
  d.cluster_start.assign(static_cast<std::size_t>(d.n_clusters) + 1, 0);
  for (long i = 0; i < n; ++i) {
    const int c = d.cluster[static_cast<std::size_t>(i)];
    if (i > 0 && c < d.cluster[static_cast<std::size_t>(i - 1)])
      throw DataError("internal: dataset rows not in canonical cluster order");
    ++d.cluster_start[static_cast<std::size_t>(c) + 1];
  }
  for (int c = 0; c < d.n_clusters; ++c)
    d.cluster_start[static_cast<std::size_t>(c) + 1] += d.cluster_start[static_cast<std::size_t>(c)];

  // Empirical between/within classification: a column is between-cluster iff
  // constant within every cluster.
  d.between_col.assign(static_cast<std::size_t>(q), true);
  for (int c = 0; c < d.n_clusters; ++c) {
    const long b = d.cluster_start[static_cast<std::size_t>(c)];
    const long e = d.cluster_start[static_cast<std::size_t>(c) + 1];
    for (int j = 0; j < q; ++j) {
      if (!d.between_col[static_cast<std::size_t>(j)]) continue;
      const double v0 = d.X(b, j);
      for (long i = b + 1; i < e; ++i)
        if (d.X(i, j) != v0) {
          d.between_col[static_cast<std::size_t>(j)] = false;
          break;
        }
    }
  }
  d.q_between = 0;
  for (bool bc : d.between_col) d.q_between += bc ? 1 : 0;
  d.q_within = q - d.q_between;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.X);
  qr.setThreshold(1e-10);
  if (qr.rank() < q)
    throw DataError("design matrix is rank-deficient (rank " + std::to_string(qr.rank()) + " of " +
                    std::to_string(q) + ")");
  return d;
}

}  // namespace hetfx
