#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "hetfx/data.hpp"
#include "hetfx/families.hpp"

namespace hetfx {

// Random-effects structure of the model.
//   none                     marginal model (GEE)
//   cluster_intercept        one random intercept per cluster
//   subgroup_within_cluster  cluster-nested subgroup random intercepts; for
//                            p=2 fitted in the random intercept + random
//                            subgroup slope parameterization
//   subgroup_intercepts      the mathematically equivalent separate
//                            per-subgroup intercepts parameterization (p=2);
//                            used for equivalence checks
enum class RandomEffects { none, cluster_intercept, subgroup_within_cluster, subgroup_intercepts };

struct ModelSpec {
  Family family = Family::gaussian;
  bool include_interaction = true;
  std::vector<int> extra_covariates;  // indices into Subject::covariates
  RandomEffects random_effects = RandomEffects::none;
};

// Fixed- and random-effects design for the interaction model. Rows are in
// canonical (cluster, subject) order with clusters contiguous.
// Fixed-effect columns: intercept, treatment, subgroup dummies (reference =
// level 0), treatment x subgroup dummies, extra covariates.
struct DesignMatrices {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<int> cluster;        // row -> cluster index
  std::vector<int> cluster_start;  // size n_clusters+1, row offsets
  Eigen::VectorXd subgroup_dummy;  // row-level 1{subgroup != 0}; random-slope column (p=2)
  int n_clusters = 0;
  int p_levels = 0;
  std::vector<std::string> col_names;
  std::vector<bool> between_col;  // column constant within every cluster?
  int q_between = 0;
  int q_within = 0;

  int n() const { return static_cast<int>(X.rows()); }
  int q() const { return static_cast<int>(X.cols()); }
  int treatment_col() const { return 1; }
  // Column of the treatment x subgroup-level-k dummy (k >= 1).
  int interaction_col(int k = 1) const { return 1 + (p_levels - 1) + k; }
  int cluster_size(int c) const { return cluster_start[c + 1] - cluster_start[c]; }
};

// Builds the design, classifies columns as between/within empirically, and
// verifies full column rank (tolerance 1e-10 * ||X||). Requires p >= 2; a
// missing treatment-by-subgroup cell surfaces as a rank error.
DesignMatrices build_design(const Dataset& data, const ModelSpec& spec);

}  // namespace hetfx
