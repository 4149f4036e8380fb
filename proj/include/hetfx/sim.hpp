#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hetfx/data.hpp"
#include "hetfx/families.hpp"
#include "hetfx/inference.hpp"

namespace hetfx {

enum class TrueModel { flexible, standard };

// Data-generating configuration (one simulation scenario). The built-in
// scenarios carry the published parameter sets; custom configs may set
// anything that satisfies the invariants (Sigma PSD, resid_var > 0, even N).
// Sigma is ordered so index 0 is the subgroup-1 component and index 1 the
// subgroup-0 component, matching the generator's assignment.
struct ScenarioConfig {
  int scenario_id = 0;  // 1..4, or 0 for custom
  Family family = Family::gaussian;
  int n_clusters = 0;
  std::vector<int> cluster_sizes;  // length n_clusters
  bool varying_sizes = false;
  TrueModel true_model = TrueModel::flexible;
  Eigen::Vector4d beta_true = Eigen::Vector4d::Zero();  // b0, b_trt, b_gr, b_mod
  Eigen::Matrix2d Sigma = Eigen::Matrix2d::Zero();      // flexible truth
  double sigma2_u = 0.0;                                // standard truth
  double resid_var = 0.64;
  int n_reps = 1000;
  std::uint64_t base_seed = 1;
  double alpha = 0.05;
  int boot_reps = 100;

  long total_n() const;
  void validate() const;  // throws DataError
};

// Exact published parameterization for (scenario, family, N): effects
// (0,0.5,0.3,0) / (-1,-0.07,-0.5,0) / (-1.66,-0.32,-0.08,0) for continuous /
// count / binary, residual variance 0.64, scenario covariances with the
// scenario-2 1/10 scaling, and the (25,50,100,150,300) size list tiled
// cyclically over 12 clusters for varying sizes.
ScenarioConfig builtin_scenario(int scenario_id, Family family, int n_clusters,
                                bool varying_sizes);

// One replicate's dataset: balanced-arm treatment permutation, Bernoulli(0.5)
// subgroup labels, bivariate-normal (or scalar) cluster random effects,
// family noise. Deterministic in (config.base_seed, rep_index).
Dataset generate_dataset(const ScenarioConfig& config, int rep_index);

enum class SimModel { flexible, two_step, standard, gee };
const char* sim_model_name(SimModel m);

struct RepRecord {
  int rep_index = 0;
  SimModel model = SimModel::flexible;
  double estimate = 0.0;
  double se = 0.0;
  std::optional<double> p;
  std::optional<double> df;
  bool singular = false;
  bool fallback_used = false;
  double seconds = 0.0;
  std::optional<double> ci_low, ci_high;
  bool reject = false;
  bool converged = false;
  std::string correction;
};

struct ModelSummary {
  double bias = 0.0;
  double esd = 0.0;
  double type1_rate = 0.0;
  int n_singular = 0;
  int n_failed = 0;
  int n_used = 0;  // converged fits backing the metrics
  std::string correction_used;
  bool estimates_comparable = true;  // false for binary (logit non-collapsible)
};

// Meta block shared by the summary and the records file; everything report
// needs to re-aggregate.
struct SimMeta {
  int schema_version = 1;
  int scenario_id = 0;
  Family family = Family::gaussian;
  int n_clusters = 0;
  std::vector<int> cluster_sizes;
  TrueModel true_model = TrueModel::flexible;
  double truth_bmod = 0.0;
  double alpha = 0.05;
  int n_reps = 0;
  std::optional<std::uint64_t> base_seed;  // empty for pooled record sets
};

struct SimulationSummary {
  SimMeta meta;
  std::map<SimModel, ModelSummary> models;
  int n_singular_flexible = 0;
  int n_singular_standard = 0;
};

struct SimulationRun {
  SimulationSummary summary;
  std::vector<RepRecord> records;
};

// Runs the full estimator grid over the replicates: flexible GLMM, two-step,
// standard GLMM and GEE, with the Table-2 correction policy (small-N path at
// N <= 12, using the configured true model; normal theory otherwise).
// Replicates are independent work units; workers > 1 executes them
// concurrently with identical results (aggregation is done in replicate
// order from the collected records).
SimulationRun run_scenario(const ScenarioConfig& config, int workers = 1);

// Order-stable aggregation of records into the summary (bias, empirical SD,
// type I rate over converged fits; singular and failure counts).
SimulationSummary summarize(const std::vector<RepRecord>& records, const SimMeta& meta);

// Records file: one JSON object per line; a leading meta line (kind="meta")
// followed by rep lines (kind="rep").
void write_records(std::ostream& out, const SimMeta& meta, const std::vector<RepRecord>& records);
struct RecordsFile {
  std::vector<SimMeta> metas;
  std::vector<RepRecord> records;
};
RecordsFile read_records(std::istream& in);  // DataError with 1-based line number

std::string summary_to_json(const SimulationSummary& s);  // stable field order
std::string summary_to_csv(const SimulationSummary& s);   // model,metric,value rows
std::string summary_to_table(const SimulationSummary& s); // human-readable, 3 decimals

}  // namespace hetfx
