// hetfx: fits GLMM / flexible GLMM / GEE heterogeneity-of-treatment-effect
// models to cluster-randomized-trial CSVs and runs the type-I-error
// simulation scenarios.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "hetfx/data.hpp"
#include "hetfx/design.hpp"
#include "hetfx/errors.hpp"
#include "hetfx/gee.hpp"
#include "hetfx/glmm.hpp"
#include "hetfx/inference.hpp"
#include "hetfx/sim.hpp"

using ordered_json = nlohmann::ordered_json;
using namespace hetfx;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDataError = 2;
constexpr int kExitFitError = 3;

std::optional<DfMethod> parse_correction(const std::string& s) {
  if (s == "auto") return std::nullopt;
  if (s == "none") return DfMethod::normal;
  if (s == "satterthwaite") return DfMethod::satterthwaite;
  if (s == "between-within") return DfMethod::between_within;
  if (s == "n-minus-p") return DfMethod::n_minus_p;
  if (s == "bootstrap") return DfMethod::bootstrap;
  throw DataError("unknown correction '" + s + "'");
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v, int digits = 4) {
  return v ? fmt(*v, digits) : std::string("-");
}

void put_opt(ordered_json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
  else j[key] = nullptr;
}

struct CoefRow {
  std::string name;
  double estimate, se;
  std::optional<double> df, p;
  double ci_low, ci_high;
};

void print_coef_table(std::ostream& out, const std::vector<CoefRow>& rows) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "  %-24s %10s %10s %8s %10s %22s\n", "coefficient", "estimate",
                "SE", "df", "p", "95% CI");
  out << buf;
  for (const CoefRow& r : rows) {
    std::snprintf(buf, sizeof buf, "  %-24s %10.4f %10.4f %8s %10s  [%8.4f, %8.4f]\n",
                  r.name.c_str(), r.estimate, r.se, fmt_opt(r.df).c_str(), fmt_opt(r.p).c_str(),
                  r.ci_low, r.ci_high);
    out << buf;
  }
}

ordered_json coef_rows_json(const std::vector<CoefRow>& rows) {
  ordered_json arr = ordered_json::array();
  for (const CoefRow& r : rows) {
    ordered_json j;
    j["name"] = r.name;
    j["estimate"] = r.estimate;
    j["se"] = r.se;
    put_opt(j, "df", r.df);
    put_opt(j, "p", r.p);
    j["ci_low"] = r.ci_low;
    j["ci_high"] = r.ci_high;
    arr.push_back(j);
  }
  return arr;
}

ordered_json hte_json(const HTETest& t) {
  ordered_json j;
  j["estimate"] = t.estimate;
  j["se"] = t.se;
  j["statistic"] = t.statistic;
  j["method"] = df_method_name(t.method);
  put_opt(j, "df", t.df);
  put_opt(j, "p", t.p_value);
  j["ci_low"] = t.ci_low;
  j["ci_high"] = t.ci_high;
  j["reject"] = t.p_value ? (*t.p_value < t.alpha) : t.reject();
  j["df_fallback"] = t.df_fallback;
  return j;
}

ordered_json subgroup_json(const SubgroupEffects& se) {
  ordered_json arr = ordered_json::array();
  for (const SubgroupEffect& e : se.effects) {
    ordered_json j;
    j["subgroup"] = e.level;
    j["estimate"] = e.estimate;
    j["se"] = e.se;
    put_opt(j, "df", e.df);
    j["ci_low"] = e.ci_low;
    j["ci_high"] = e.ci_high;
    arr.push_back(j);
  }
  return arr;
}

void print_hte(std::ostream& out, const HTETest& t) {
  out << "  HTE test (treatment x subgroup): estimate=" << fmt(t.estimate)
      << " SE=" << fmt(t.se) << " method=" << df_method_name(t.method);
  if (t.df) out << " df=" << fmt(*t.df);
  if (t.p_value) out << " p=" << fmt(*t.p_value);
  else out << " p=- (bootstrap CI decision)";
  out << " CI=[" << fmt(t.ci_low) << ", " << fmt(t.ci_high) << "]";
  if (t.df_fallback) out << "  [warning: correction fell back to df=N-2]";
  out << "\n";
}

void print_subgroups(std::ostream& out, const SubgroupEffects& se) {
  for (const SubgroupEffect& e : se.effects) {
    out << "  effect within subgroup " << e.level << ": " << fmt(e.estimate) << " (SE "
        << fmt(e.se);
    if (e.df) out << ", df " << fmt(*e.df);
    out << ") CI=[" << fmt(e.ci_low) << ", " << fmt(e.ci_high) << "]\n";
  }
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitArgs {
  std::string data, family, model = "all";
  std::string cluster = "cluster", treatment = "treatment", subgroup = "subgroup";
  std::vector<std::string> covariates;
  std::string correction = "auto";
  int boot_reps = 100;
  std::uint64_t seed = 1;
  std::string out;
  double alpha = 0.05;
};

DfMethod resolve_correction(const std::optional<DfMethod>& requested, ModelKind kind,
                            Family family, int n_clusters, std::ostream& log) {
  if (requested) {
    if (kind == ModelKind::gee &&
        (*requested == DfMethod::satterthwaite || *requested == DfMethod::between_within ||
         *requested == DfMethod::n_minus_p || *requested == DfMethod::bootstrap)) {
      log << "  (requested correction does not apply to GEE; using the auto rule)\n";
      return select_correction(kind, family, n_clusters);
    }
    return *requested;
  }
  const DfMethod m = select_correction(kind, family, n_clusters);
  if (n_clusters > kSmallClusterThreshold && n_clusters < 50)
    log << "  [warning: " << n_clusters
        << " clusters; small-sample corrections are calibrated for N <= 12, using normal theory]\n";
  if (n_clusters <= kSmallClusterThreshold && kind != ModelKind::gee &&
      family != Family::gaussian) {
    const DfMethod alt = select_correction(kind, family, n_clusters, false);
    if (alt != m)
      log << "  (auto correction assumes flexible-model truth: " << df_method_name(m)
          << "; under standard-model truth it would be " << df_method_name(alt) << ")\n";
  }
  return m;
}

int cmd_fit(const FitArgs& args) {
  const Family family = family_from_name(args.family);
  CsvSchema schema;
  schema.cluster = args.cluster;
  schema.treatment = args.treatment;
  schema.subgroup = args.subgroup;
  schema.covariates = args.covariates;
  const Dataset data = load_dataset(args.data, schema);

  ModelSpec spec;
  spec.family = family;
  for (std::size_t i = 0; i < args.covariates.size(); ++i)
    spec.extra_covariates.push_back(static_cast<int>(i));
  const DesignMatrices design = build_design(data, spec);
  const std::optional<DfMethod> requested = parse_correction(args.correction);
  const double alpha = args.alpha;

  ordered_json result;
  result["schema_version"] = 1;
  result["data"] = {{"path", args.data},
                    {"n", design.n()},
                    {"n_clusters", design.n_clusters},
                    {"subgroup_levels", design.p_levels},
                    {"family", family_name(family)}};
  ordered_json models;

  const bool want_flexible = args.model == "flexible-glmm" || args.model == "all";
  const bool want_standard = args.model == "glmm" || args.model == "all";
  const bool want_gee = args.model == "gee" || args.model == "all";
  if (!want_flexible && !want_standard && !want_gee)
    throw DataError("unknown model '" + args.model + "'");

  auto glmm_block = [&](const char* label, RandomEffects structure, ModelKind kind) {
    std::cout << "== " << label << " ==\n";
    const FitResult fit = fit_glmm(design, family, structure);
    if (!fit.converged) throw FitError(std::string(label) + " did not converge");
    const DfMethod method = resolve_correction(requested, kind, family, design.n_clusters, std::cout);

    std::optional<BootstrapCi> boot;
    if (method == DfMethod::bootstrap)
      boot = parametric_bootstrap_ci(fit, design, family, args.boot_reps, args.seed, alpha);

    std::vector<CoefRow> rows;
    for (int j = 0; j < design.q(); ++j) {
      CoefRow r;
      r.name = design.col_names[static_cast<std::size_t>(j)];
      r.estimate = fit.beta[j];
      r.se = std::sqrt(fit.vcov_beta(j, j));
      Eigen::VectorXd c = Eigen::VectorXd::Zero(design.q());
      c[j] = 1.0;
      if (method == DfMethod::bootstrap) {
        std::vector<double> draws;
        for (Eigen::Index b = 0; b < boot->beta_draws.rows(); ++b)
          draws.push_back(boot->beta_draws(b, j));
        r.ci_low = boot->percentile(draws, alpha / 2.0);
        r.ci_high = boot->percentile(draws, 1.0 - alpha / 2.0);
      } else {
        std::optional<double> df;
        if (method == DfMethod::satterthwaite) df = satterthwaite_df(fit, design, c).df;
        else if (method == DfMethod::between_within) df = between_within_df(design, c);
        else if (method == DfMethod::n_minus_p) df = n_minus_p_df(design);
        const double crit =
            df ? t_quantile(1.0 - alpha / 2.0, *df) : normal_quantile(1.0 - alpha / 2.0);
        const double stat = r.estimate / r.se;
        r.df = df;
        r.p = df ? 2.0 * (1.0 - t_cdf(std::abs(stat), *df))
                 : 2.0 * (1.0 - normal_cdf(std::abs(stat)));
        r.ci_low = r.estimate - crit * r.se;
        r.ci_high = r.estimate + crit * r.se;
      }
      rows.push_back(r);
    }
    print_coef_table(std::cout, rows);

    const HTETest t =
        wald_interaction_test(fit, design, method, alpha, boot ? &*boot : nullptr);
    print_hte(std::cout, t);
    const SubgroupEffects se =
        subgroup_effects(fit, design, method, alpha, boot ? &*boot : nullptr);
    print_subgroups(std::cout, se);
    if (fit.singular)
      std::cout << "  [singular fit: a variance component is at the boundary"
                << (kind == ModelKind::flexible
                        ? "; the two-step procedure would fall back to the standard GLMM"
                        : "")
                << "]\n";
    std::cout << "  deviance=" << fmt(fit.deviance, 8);
    if (family == Family::gaussian) std::cout << " sigma_resid=" << fmt(fit.sigma_resid);
    std::cout << " outer_evals=" << fit.n_outer_evals << "\n\n";

    ordered_json mj;
    mj["converged"] = fit.converged;
    mj["singular"] = fit.singular;
    mj["deviance"] = fit.deviance;
    if (family == Family::gaussian) mj["sigma_resid"] = fit.sigma_resid;
    mj["theta"] = std::vector<double>(fit.theta_hat.theta.data(),
                                      fit.theta_hat.theta.data() + fit.theta_hat.theta.size());
    mj["coefficients"] = coef_rows_json(rows);
    mj["hte_test"] = hte_json(t);
    mj["subgroup_effects"] = subgroup_json(se);
    if (boot) {
      mj["bootstrap"] = {{"reps", args.boot_reps},
                         {"failed", boot->n_failed},
                         {"singular", boot->n_singular_boot},
                         {"seed", args.seed}};
    }
    return mj;
  };

  if (want_flexible)
    models["flexible_glmm"] =
        glmm_block("flexible GLMM", RandomEffects::subgroup_within_cluster, ModelKind::flexible);
  if (want_standard)
    models["glmm"] = glmm_block("GLMM", RandomEffects::cluster_intercept, ModelKind::standard);
  if (want_gee) {
    std::cout << "== GEE (independence) ==\n";
    const GeeFitResult fit = fit_gee(design, family);
    DfMethod method = resolve_correction(requested, ModelKind::gee, family, design.n_clusters,
                                         std::cout);
    if (method != DfMethod::normal && method != DfMethod::fay_graubard)
      method = DfMethod::normal;
    FayGraubard fg;
    if (method == DfMethod::fay_graubard) fg = fay_graubard_adjust(fit, design, family);
    const Eigen::MatrixXd& vcov = fg.applicable ? fg.vcov_fg : fit.vcov_robust;
    const double nm2 = static_cast<double>(design.n_clusters) - 2.0;

    std::vector<CoefRow> rows;
    for (int j = 0; j < design.q(); ++j) {
      CoefRow r;
      r.name = design.col_names[static_cast<std::size_t>(j)];
      r.estimate = fit.beta[j];
      r.se = std::sqrt(vcov(j, j));
      std::optional<double> df;
      if (method == DfMethod::fay_graubard) {
        Eigen::VectorXd c = Eigen::VectorXd::Zero(design.q());
        c[j] = 1.0;
        df = fg.applicable ? std::min(fg.df_for(c), nm2) : nm2;
      }
      const double stat = r.estimate / r.se;
      r.df = df;
      r.p = df ? 2.0 * (1.0 - t_cdf(std::abs(stat), *df)) : 2.0 * (1.0 - normal_cdf(std::abs(stat)));
      const double crit =
          df ? t_quantile(1.0 - alpha / 2.0, *df) : normal_quantile(1.0 - alpha / 2.0);
      r.ci_low = r.estimate - crit * r.se;
      r.ci_high = r.estimate + crit * r.se;
      rows.push_back(r);
    }
    print_coef_table(std::cout, rows);
    const HTETest t = wald_interaction_test_gee(fit, design, family, method, alpha);
    print_hte(std::cout, t);
    if (method == DfMethod::fay_graubard && !fg.applicable)
      std::cout << "  [warning: Fay-Graubard correction not applicable (singular information"
                   " matrix); robust variance with df=N-2 used]\n";
    const SubgroupEffects se = subgroup_effects_gee(fit, design, family, method, alpha);
    print_subgroups(std::cout, se);
    std::cout << "\n";

    ordered_json mj;
    mj["converged"] = fit.converged;
    mj["dispersion"] = fit.dispersion;
    mj["fg_applicable"] = method == DfMethod::fay_graubard ? ordered_json(fg.applicable)
                                                           : ordered_json(nullptr);
    mj["coefficients"] = coef_rows_json(rows);
    mj["hte_test"] = hte_json(t);
    mj["subgroup_effects"] = subgroup_json(se);
    models["gee"] = mj;
  }

  result["models"] = models;
  const std::string json_text = result.dump(2) + "\n";
  std::cout << "--- result (json) ---\n" << json_text;
  if (!args.out.empty()) {
    std::ofstream out(args.out);
    if (!out) throw DataError("cannot write '" + args.out + "'");
    out << json_text;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate / report
// ---------------------------------------------------------------------------

struct SimArgs {
  int scenario = 1;
  std::string family = "gaussian";
  int clusters = 50;
  bool varying_sizes = false;
  int reps = 1000;
  std::uint64_t seed = 1;
  std::string out;
  int workers = 1;
  int boot_reps = 100;
  double alpha = 0.05;
};

int cmd_simulate(const SimArgs& args) {
  if (args.reps <= 0) throw DataError("--reps must be positive");
  ScenarioConfig config =
      builtin_scenario(args.scenario, family_from_name(args.family), args.clusters,
                       args.varying_sizes);
  config.n_reps = args.reps;
  config.base_seed = args.seed;
  config.boot_reps = args.boot_reps;
  config.alpha = args.alpha;

  const SimulationRun run = run_scenario(config, args.workers);
  std::cout << summary_to_table(run.summary);
  const std::string json_text = summary_to_json(run.summary);
  std::cout << "--- summary (json) ---\n" << json_text;

  if (!args.out.empty()) {
    const std::string rec_path = args.out + ".records.jsonl";
    const std::string sum_path = args.out + ".summary.json";
    std::ofstream rec(rec_path);
    if (!rec) throw DataError("cannot write '" + rec_path + "'");
    write_records(rec, run.summary.meta, run.records);
    std::ofstream sum(sum_path);
    if (!sum) throw DataError("cannot write '" + sum_path + "'");
    sum << json_text;
    std::cout << "records: " << rec_path << "\nsummary: " << sum_path << "\n";
  }
  return kExitOk;
}

struct ReportArgs {
  std::string in;
  std::string format = "table";
};

int cmd_report(const ReportArgs& args) {
  std::ifstream in(args.in);
  if (!in) throw DataError("cannot open '" + args.in + "'");
  const RecordsFile f = read_records(in);

  SimMeta meta = f.metas.front();
  for (std::size_t i = 1; i < f.metas.size(); ++i) {
    const SimMeta& m = f.metas[i];
    if (m.scenario_id != meta.scenario_id || m.family != meta.family ||
        m.n_clusters != meta.n_clusters || m.cluster_sizes != meta.cluster_sizes ||
        m.true_model != meta.true_model || m.truth_bmod != meta.truth_bmod ||
        m.alpha != meta.alpha)
      throw DataError("records stem from incompatible runs and cannot be pooled");
    meta.n_reps += m.n_reps;
    if (meta.base_seed != m.base_seed) meta.base_seed.reset();
  }

  const SimulationSummary summary = summarize(f.records, meta);
  if (args.format == "table") std::cout << summary_to_table(summary);
  else if (args.format == "csv") std::cout << summary_to_csv(summary);
  else if (args.format == "json") std::cout << summary_to_json(summary);
  else throw DataError("unknown format '" + args.format + "'");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HTE analysis for cluster-randomized trials: flexible GLMM, GLMM and GEE"};
  app.require_subcommand(1);

  FitArgs fit_args;
  CLI::App* fit = app.add_subcommand("fit", "fit models to a CSV dataset");
  fit->add_option("--data", fit_args.data, "input CSV")->required();
  fit->add_option("--family", fit_args.family, "gaussian|poisson|binomial")->required();
  fit->add_option("--model", fit_args.model, "flexible-glmm|glmm|gee|all");
  fit->add_option("--cluster", fit_args.cluster, "cluster id column");
  fit->add_option("--treatment", fit_args.treatment, "treatment column (0/1)");
  fit->add_option("--subgroup", fit_args.subgroup, "subgroup column");
  fit->add_option("--covariates", fit_args.covariates, "extra covariate columns")->delimiter(',');
  fit->add_option("--correction", fit_args.correction,
                  "auto|satterthwaite|between-within|n-minus-p|bootstrap|none");
  fit->add_option("--boot-reps", fit_args.boot_reps, "bootstrap replicates");
  fit->add_option("--seed", fit_args.seed, "bootstrap seed");
  fit->add_option("--out", fit_args.out, "write the JSON result here too");
  fit->add_option("--alpha", fit_args.alpha, "significance level");

  SimArgs sim_args;
  CLI::App* sim = app.add_subcommand("simulate", "run a simulation scenario");
  sim->add_option("--scenario", sim_args.scenario, "1|2|3|4")->required();
  sim->add_option("--family", sim_args.family, "gaussian|poisson|binomial")->required();
  sim->add_option("--clusters", sim_args.clusters, "number of clusters")->required();
  sim->add_flag("--varying-sizes", sim_args.varying_sizes, "tile sizes (25,50,100,150,300)");
  sim->add_option("--reps", sim_args.reps, "replicates")->required();
  sim->add_option("--seed", sim_args.seed, "base seed");
  sim->add_option("--out", sim_args.out, "output prefix (.records.jsonl / .summary.json)");
  sim->add_option("--workers", sim_args.workers, "worker threads");
  sim->add_option("--boot-reps", sim_args.boot_reps, "bootstrap replicates per fit");
  sim->add_option("--alpha", sim_args.alpha, "significance level");

  ReportArgs rep_args;
  CLI::App* rep = app.add_subcommand("report", "re-aggregate a records file");
  rep->add_option("--in", rep_args.in, "records file (.jsonl)")->required();
  rep->add_option("--format", rep_args.format, "table|csv|json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitDataError;
  }

  try {
    if (fit->parsed()) return cmd_fit(fit_args);
    if (sim->parsed()) return cmd_simulate(sim_args);
    if (rep->parsed()) return cmd_report(rep_args);
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const FitError& e) {
    std::cerr << "fit error: " << e.what() << "\n";
    return kExitFitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFitError;
  }
  return kExitDataError;
}
