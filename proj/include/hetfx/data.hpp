#pragma once

#include <string>
#include <vector>

#include "hetfx/families.hpp"

namespace hetfx {

// One row of cluster-randomized-trial data. Treatment is assigned at the
// cluster level; subgroup is a subject-level factor coded 0..p-1.
struct Subject {
  int cluster_id = 0;
  int subject_id = 0;
  double outcome = 0.0;
  int treatment = 0;
  int subgroup = 0;
  std::vector<double> covariates;
};

// Validated dataset. Cluster ids are dense 0..n_clusters-1, every cluster is
// non-empty and carries a single treatment arm. Immutable after
// construction; safe to share across threads.
struct Dataset {
  std::vector<Subject> rows;
  int n_clusters = 0;
  int subgroup_levels = 0;
  std::vector<std::string> covariate_names;

  std::vector<int> cluster_sizes() const;
};

// Builds a Dataset from rows, re-indexing cluster ids densely (ascending
// original id) and subgroup codes densely (ascending original code).
// Validates the cluster/treatment/subgroup invariants; throws DataError.
Dataset make_dataset(std::vector<Subject> rows, const std::vector<std::string>& covariate_names = {});

// Column-name mapping for CSV input.
struct CsvSchema {
  std::string cluster = "cluster";
  std::string treatment = "treatment";
  std::string subgroup = "subgroup";
  std::string outcome = "outcome";
  std::vector<std::string> covariates;
};

// Loads a header-equipped CSV ('.' decimal separator, no missing values).
// Errors carry the 1-based data row number where parsing failed.
Dataset load_dataset(const std::string& path, const CsvSchema& schema);

// Writes a dataset back out in the same schema; round-trips through
// load_dataset bit-identically (full-precision doubles).
void write_dataset_csv(const Dataset& data, const std::string& path, const CsvSchema& schema);

}  // namespace hetfx
