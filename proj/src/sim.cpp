#include "hetfx/sim.hpp"

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "hetfx/errors.hpp"
#include "hetfx/rng.hpp"

namespace hetfx {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kVaryingSizes[5] = {25, 50, 100, 150, 300};

const char* true_model_name(TrueModel t) {
  return t == TrueModel::flexible ? "flexible" : "standard";
}

TrueModel true_model_from_name(const std::string& s) {
  if (s == "flexible") return TrueModel::flexible;
  if (s == "standard") return TrueModel::standard;
  throw DataError("unknown true model '" + s + "'");
}

// PSD factor of a 2x2 covariance, tolerating zero variances.
Eigen::Matrix2d psd_chol2(const Eigen::Matrix2d& s) {
  const double tol = 1e-12 * std::max(1.0, s.cwiseAbs().maxCoeff());
  if (s(0, 1) != s(1, 0) || s(0, 0) < -tol || s(1, 1) < -tol ||
      s(0, 0) * s(1, 1) - s(0, 1) * s(0, 1) < -tol * std::max(1.0, s.cwiseAbs().maxCoeff()))
    throw DataError("Sigma must be a symmetric positive semi-definite 2x2 matrix");
  Eigen::Matrix2d l = Eigen::Matrix2d::Zero();
  l(0, 0) = std::sqrt(std::max(s(0, 0), 0.0));
  if (l(0, 0) > 0.0) l(1, 0) = s(0, 1) / l(0, 0);
  else if (std::abs(s(0, 1)) > tol)
    throw DataError("Sigma has zero variance but non-zero covariance");
  l(1, 1) = std::sqrt(std::max(s(1, 1) - l(1, 0) * l(1, 0), 0.0));
  return l;
}

}  // namespace

long ScenarioConfig::total_n() const {
  long n = 0;
  for (int s : cluster_sizes) n += s;
  return n;
}

void ScenarioConfig::validate() const {
  if (n_clusters < 2 || n_clusters % 2 != 0)
    throw DataError("balanced 1:1 arms need an even number of clusters >= 2");
  if (static_cast<int>(cluster_sizes.size()) != n_clusters)
    throw DataError("cluster_sizes must list one size per cluster");
  for (int s : cluster_sizes)
    if (s < 1) throw DataError("cluster sizes must be positive");
  if (true_model == TrueModel::flexible) psd_chol2(Sigma);
  else if (sigma2_u < 0.0)
    throw DataError("sigma2_u must be non-negative");
  if (family == Family::gaussian && resid_var <= 0.0)
    throw DataError("resid_var must be positive");
  if (n_reps < 1) throw DataError("n_reps must be at least 1");
  if (alpha <= 0.0 || alpha >= 1.0) throw DataError("alpha must be in (0,1)");
  if (boot_reps < 1) throw DataError("boot_reps must be at least 1");
}

ScenarioConfig builtin_scenario(int scenario_id, Family family, int n_clusters,
                                bool varying_sizes) {
  ScenarioConfig c;
  c.scenario_id = scenario_id;
  c.family = family;
  c.n_clusters = n_clusters;
  c.varying_sizes = varying_sizes;

  switch (family) {
    case Family::gaussian: c.beta_true << 0.0, 0.5, 0.3, 0.0; break;
    case Family::poisson: c.beta_true << -1.0, -0.07, -0.5, 0.0; break;
    case Family::bernoulli: c.beta_true << -1.66, -0.32, -0.08, 0.0; break;
  }
  c.resid_var = 0.64;

  Eigen::Matrix2d sigma1;
  switch (family) {
    case Family::gaussian: sigma1 << 0.2, 0.13, 0.13, 0.1; break;
    case Family::poisson: sigma1 << 0.5, 0.25, 0.25, 0.5; break;
    case Family::bernoulli: sigma1 << 0.25, 0.18, 0.18, 0.5; break;
  }

  auto fixed_sizes = [&](int size) {
    c.cluster_sizes.assign(static_cast<std::size_t>(n_clusters), size);
  };
  auto tiled_sizes = [&] {
    c.cluster_sizes.resize(static_cast<std::size_t>(n_clusters));
    for (int i = 0; i < n_clusters; ++i)
      c.cluster_sizes[static_cast<std::size_t>(i)] = kVaryingSizes[i % 5];
  };

  switch (scenario_id) {
    case 1:
    case 2:
      if ((n_clusters != 50 && n_clusters != 100) || varying_sizes)
        throw DataError("scenarios 1 and 2 use N in {50,100} with fixed cluster size 100");
      c.true_model = TrueModel::flexible;
      c.Sigma = scenario_id == 1 ? sigma1 : Eigen::Matrix2d(sigma1 / 10.0);
      fixed_sizes(100);
      break;
    case 3:
      if (n_clusters != 12)
        throw DataError("scenario 3 uses N = 12");
      c.true_model = TrueModel::flexible;
      c.Sigma = sigma1;
      if (varying_sizes) tiled_sizes();
      else fixed_sizes(100);
      break;
    case 4:
      c.true_model = TrueModel::standard;
      c.sigma2_u = family == Family::gaussian ? 0.2 : 0.5;
      if (n_clusters == 50 && !varying_sizes) fixed_sizes(100);
      else if (n_clusters == 12 && varying_sizes) tiled_sizes();
      else
        throw DataError("scenario 4 uses N=50 fixed size 100 or N=12 with varying sizes");
      break;
    default:
      throw DataError("scenario id must be 1..4");
  }
  c.validate();
  return c;
}

Dataset generate_dataset(const ScenarioConfig& config, int rep_index) {
  config.validate();
  const std::uint64_t rep_stream =
      Rng::substream(config.base_seed, static_cast<std::uint64_t>(rep_index));
  Rng trt_rng(Rng::substream(rep_stream, 1));
  Rng gr_rng(Rng::substream(rep_stream, 2));
  Rng re_rng(Rng::substream(rep_stream, 3));
  Rng noise_rng(Rng::substream(rep_stream, 4));

  const int nc = config.n_clusters;
  std::vector<int> arms(static_cast<std::size_t>(nc));
  for (int i = 0; i < nc; ++i) arms[static_cast<std::size_t>(i)] = i < nc / 2 ? 0 : 1;
  trt_rng.shuffle(arms);

  const bool flexible = config.true_model == TrueModel::flexible;
  const Eigen::Matrix2d l = flexible ? psd_chol2(config.Sigma) : Eigen::Matrix2d::Zero();
  const double su = flexible ? 0.0 : std::sqrt(config.sigma2_u);
  const double resid_sd = std::sqrt(config.resid_var);
  const Eigen::Vector4d& b = config.beta_true;

  std::vector<Subject> rows;
  rows.reserve(static_cast<std::size_t>(config.total_n()));
  int sid = 0;
  for (int c = 0; c < nc; ++c) {
    const int trt = arms[static_cast<std::size_t>(c)];
    double u1 = 0.0, u0 = 0.0;
    if (flexible) {
      const double z1 = re_rng.normal();
      const double z2 = re_rng.normal();
      u1 = l(0, 0) * z1;            // subgroup-1 component
      u0 = l(1, 0) * z1 + l(1, 1) * z2;  // subgroup-0 component
    } else {
      u1 = u0 = re_rng.normal(0.0, su);
    }
    const int size = config.cluster_sizes[static_cast<std::size_t>(c)];
    for (int j = 0; j < size; ++j) {
      Subject s;
      s.cluster_id = c;
      s.subject_id = sid++;
      s.treatment = trt;
      s.subgroup = gr_rng.bernoulli(0.5) ? 1 : 0;
      const double re = s.subgroup == 1 ? u1 : u0;
      const double eta = b[0] + b[1] * trt + b[2] * s.subgroup + b[3] * trt * s.subgroup + re;
      switch (config.family) {
        case Family::gaussian: s.outcome = eta + noise_rng.normal(0.0, resid_sd); break;
        case Family::poisson:
          s.outcome = static_cast<double>(noise_rng.poisson(std::exp(eta)));
          break;
        case Family::bernoulli:
          s.outcome = noise_rng.bernoulli(inverse_link(Family::bernoulli, eta)) ? 1.0 : 0.0;
          break;
      }
      rows.push_back(s);
    }
  }
  return make_dataset(std::move(rows));
}

const char* sim_model_name(SimModel m) {
  switch (m) {
    case SimModel::flexible: return "flexible";
    case SimModel::two_step: return "two_step";
    case SimModel::standard: return "standard";
    case SimModel::gee: return "gee";
  }
  return "?";
}

namespace {

SimModel sim_model_from_name(const std::string& s) {
  if (s == "flexible") return SimModel::flexible;
  if (s == "two_step") return SimModel::two_step;
  if (s == "standard") return SimModel::standard;
  if (s == "gee") return SimModel::gee;
  throw DataError("unknown model '" + s + "'");
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RepRecord failed_record(int rep, SimModel model, double seconds) {
  RepRecord r;
  r.rep_index = rep;
  r.model = model;
  r.converged = false;
  r.seconds = seconds;
  return r;
}

void fill_from_test(RepRecord& r, const HTETest& t, double alpha) {
  r.estimate = t.estimate;
  r.se = t.se;
  r.p = t.p_value;
  r.df = t.df;
  r.ci_low = t.ci_low;
  r.ci_high = t.ci_high;
  r.reject = t.p_value ? (*t.p_value < alpha) : t.reject();
  r.converged = true;
  r.correction = df_method_name(t.method);
}

std::array<RepRecord, 4> run_replicate(const ScenarioConfig& config, int rep) {
  const Dataset data = generate_dataset(config, rep);
  ModelSpec spec;
  spec.family = config.family;
  const DesignMatrices design = build_design(data, spec);
  const bool flexible_truth = config.true_model == TrueModel::flexible;
  const double alpha = config.alpha;
  const std::uint64_t rep_stream =
      Rng::substream(config.base_seed, static_cast<std::uint64_t>(rep));
  const std::uint64_t boot_seed = Rng::substream(rep_stream, 5);

  std::array<RepRecord, 4> out;

  // GLMM-type models share the bootstrap/correction plumbing.
  auto glmm_record = [&](SimModel which, ModelKind kind, const FitResult& fit,
                         std::chrono::steady_clock::time_point t0) {
    RepRecord r;
    r.rep_index = rep;
    r.model = which;
    r.singular = fit.singular;
    if (!fit.converged) {
      r.converged = false;
      r.seconds = elapsed_s(t0);
      return r;
    }
    const DfMethod method = select_correction(kind, config.family, config.n_clusters, flexible_truth);
    if (method == DfMethod::bootstrap) {
      const BootstrapCi boot = parametric_bootstrap_ci(fit, design, config.family,
                                                       config.boot_reps, boot_seed, alpha);
      const HTETest t = wald_interaction_test(fit, design, method, alpha, &boot);
      fill_from_test(r, t, alpha);
    } else {
      const HTETest t = wald_interaction_test(fit, design, method, alpha);
      fill_from_test(r, t, alpha);
    }
    r.seconds = elapsed_s(t0);
    return r;
  };

  FitResult flexible_fit, standard_fit;
  bool flexible_ok = false, standard_ok = false;

  {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      flexible_fit = fit_glmm(design, config.family, RandomEffects::subgroup_within_cluster);
      flexible_ok = flexible_fit.converged;
      out[0] = flexible_ok ? glmm_record(SimModel::flexible, ModelKind::flexible, flexible_fit, t0)
                           : failed_record(rep, SimModel::flexible, elapsed_s(t0));
      out[0].singular = flexible_fit.singular;
    } catch (const std::exception&) {
      out[0] = failed_record(rep, SimModel::flexible, elapsed_s(t0));
    }
  }
  {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      standard_fit = fit_glmm(design, config.family, RandomEffects::cluster_intercept);
      standard_ok = standard_fit.converged;
      out[2] = standard_ok ? glmm_record(SimModel::standard, ModelKind::standard, standard_fit, t0)
                           : failed_record(rep, SimModel::standard, elapsed_s(t0));
      out[2].singular = standard_fit.singular;
    } catch (const std::exception&) {
      out[2] = failed_record(rep, SimModel::standard, elapsed_s(t0));
    }
  }
  {
    // Two-step rule: flexible unless it was singular (or failed to fit).
    const bool fallback = !flexible_ok || flexible_fit.singular;
    out[1] = fallback ? out[2] : out[0];
    out[1].model = SimModel::two_step;
    out[1].rep_index = rep;
    out[1].fallback_used = fallback;
    if (fallback && standard_ok) {
      // the fallback fit keeps its own correction (standard-GLMM column)
      out[1].singular = standard_fit.singular;
    }
  }
  {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const GeeFitResult gee = fit_gee(design, config.family);
      const DfMethod method =
          select_correction(ModelKind::gee, config.family, config.n_clusters, flexible_truth);
      const HTETest t = wald_interaction_test_gee(gee, design, config.family, method, alpha);
      RepRecord r;
      r.rep_index = rep;
      r.model = SimModel::gee;
      fill_from_test(r, t, alpha);
      if (t.df_fallback) r.correction += "(n-2-fallback)";
      r.seconds = elapsed_s(t0);
      out[3] = r;
    } catch (const std::exception&) {
      out[3] = failed_record(rep, SimModel::gee, elapsed_s(t0));
    }
  }
  return out;
}

}  // namespace

SimulationRun run_scenario(const ScenarioConfig& config, int workers) {
  config.validate();
  const int reps = config.n_reps;
  std::vector<std::array<RepRecord, 4>> slots(static_cast<std::size_t>(reps));

  if (workers < 1) workers = 1;
  std::atomic<int> next{0};
  std::exception_ptr first_error = nullptr;
  std::mutex error_mutex;

  auto work = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= reps) return;
      try {
        slots[static_cast<std::size_t>(r)] = run_replicate(config, r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  SimulationRun run;
  run.records.reserve(static_cast<std::size_t>(reps) * 4);
  for (const auto& slot : slots)
    for (const RepRecord& r : slot) run.records.push_back(r);

  SimMeta meta;
  meta.scenario_id = config.scenario_id;
  meta.family = config.family;
  meta.n_clusters = config.n_clusters;
  meta.cluster_sizes = config.cluster_sizes;
  meta.true_model = config.true_model;
  meta.truth_bmod = config.beta_true[3];
  meta.alpha = config.alpha;
  meta.n_reps = reps;
  meta.base_seed = config.base_seed;
  run.summary = summarize(run.records, meta);

  for (const auto& kv : run.summary.models) {
    if (kv.second.n_failed * 10 > reps)
      throw FitError(std::string("more than 10% of replicates failed for model ") +
                     sim_model_name(kv.first) + " (" + std::to_string(kv.second.n_failed) + "/" +
                     std::to_string(reps) + ")");
  }
  return run;
}

SimulationSummary summarize(const std::vector<RepRecord>& records, const SimMeta& meta) {
  SimulationSummary s;
  s.meta = meta;
  for (SimModel m : {SimModel::flexible, SimModel::two_step, SimModel::standard, SimModel::gee})
    s.models[m] = ModelSummary{};

  for (const RepRecord& r : records) {
    ModelSummary& ms = s.models[r.model];
    if (!r.converged) {
      ++ms.n_failed;
      continue;
    }
    if (r.singular) ++ms.n_singular;
    bool seen = false;
    std::stringstream ss(ms.correction_used);
    std::string tok;
    while (std::getline(ss, tok, '+'))
      if (tok == r.correction) seen = true;
    if (!seen) {
      if (!ms.correction_used.empty()) ms.correction_used += "+";
      ms.correction_used += r.correction;
    }
  }

  for (auto& kv : s.models) {
    double sum = 0.0;
    long n = 0, rejects = 0;
    for (const RepRecord& r : records) {
      if (r.model != kv.first || !r.converged) continue;
      sum += r.estimate;
      ++n;
      if (r.reject) ++rejects;
    }
    kv.second.n_used = static_cast<int>(n);
    kv.second.estimates_comparable = meta.family != Family::bernoulli;
    if (n > 0) {
      const double mean = sum / static_cast<double>(n);
      kv.second.bias = mean - meta.truth_bmod;
      kv.second.type1_rate = static_cast<double>(rejects) / static_cast<double>(n);
      double ss = 0.0;
      for (const RepRecord& r : records) {
        if (r.model != kv.first || !r.converged) continue;
        const double d = r.estimate - mean;
        ss += d * d;
      }
      kv.second.esd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    }
  }

  s.n_singular_flexible = s.models[SimModel::flexible].n_singular;
  s.n_singular_standard = s.models[SimModel::standard].n_singular;
  return s;
}

// ---------------------------------------------------------------------------
// Records and summary serialization
// ---------------------------------------------------------------------------

namespace {

ordered_json meta_to_json(const SimMeta& m) {
  ordered_json j;
  j["kind"] = "meta";
  j["schema_version"] = m.schema_version;
  j["scenario_id"] = m.scenario_id;
  j["family"] = family_name(m.family);
  j["n_clusters"] = m.n_clusters;
  j["cluster_sizes"] = m.cluster_sizes;
  j["true_model"] = true_model_name(m.true_model);
  j["truth_bmod"] = m.truth_bmod;
  j["alpha"] = m.alpha;
  j["n_reps"] = m.n_reps;
  if (m.base_seed) j["base_seed"] = *m.base_seed;
  else j["base_seed"] = nullptr;
  return j;
}

SimMeta meta_from_json(const ordered_json& j) {
  SimMeta m;
  m.schema_version = j.at("schema_version").get<int>();
  m.scenario_id = j.at("scenario_id").get<int>();
  m.family = family_from_name(j.at("family").get<std::string>());
  m.n_clusters = j.at("n_clusters").get<int>();
  m.cluster_sizes = j.at("cluster_sizes").get<std::vector<int>>();
  m.true_model = true_model_from_name(j.at("true_model").get<std::string>());
  m.truth_bmod = j.at("truth_bmod").get<double>();
  m.alpha = j.at("alpha").get<double>();
  m.n_reps = j.at("n_reps").get<int>();
  if (!j.at("base_seed").is_null()) m.base_seed = j.at("base_seed").get<std::uint64_t>();
  return m;
}

void put_opt(ordered_json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
  else j[key] = nullptr;
}

ordered_json rep_to_json(const RepRecord& r) {
  ordered_json j;
  j["kind"] = "rep";
  j["rep_index"] = r.rep_index;
  j["model"] = sim_model_name(r.model);
  if (r.converged) {
    j["estimate"] = r.estimate;
    j["se"] = r.se;
  } else {
    j["estimate"] = nullptr;
    j["se"] = nullptr;
  }
  put_opt(j, "p", r.p);
  put_opt(j, "df", r.df);
  j["singular"] = r.singular;
  j["fallback_used"] = r.fallback_used;
  j["seconds"] = r.seconds;
  put_opt(j, "ci_low", r.ci_low);
  put_opt(j, "ci_high", r.ci_high);
  j["reject"] = r.reject;
  j["converged"] = r.converged;
  j["correction"] = r.correction;
  return j;
}

RepRecord rep_from_json(const ordered_json& j) {
  RepRecord r;
  r.rep_index = j.at("rep_index").get<int>();
  r.model = sim_model_from_name(j.at("model").get<std::string>());
  r.converged = j.at("converged").get<bool>();
  if (!j.at("estimate").is_null()) r.estimate = j.at("estimate").get<double>();
  if (!j.at("se").is_null()) r.se = j.at("se").get<double>();
  if (!j.at("p").is_null()) r.p = j.at("p").get<double>();
  if (!j.at("df").is_null()) r.df = j.at("df").get<double>();
  r.singular = j.at("singular").get<bool>();
  r.fallback_used = j.at("fallback_used").get<bool>();
  r.seconds = j.at("seconds").get<double>();
  if (!j.at("ci_low").is_null()) r.ci_low = j.at("ci_low").get<double>();
  if (!j.at("ci_high").is_null()) r.ci_high = j.at("ci_high").get<double>();
  r.reject = j.at("reject").get<bool>();
  r.correction = j.at("correction").get<std::string>();
  return r;
}

}  // namespace

void write_records(std::ostream& out, const SimMeta& meta, const std::vector<RepRecord>& records) {
  out << meta_to_json(meta).dump() << '\n';
  for (const RepRecord& r : records) out << rep_to_json(r).dump() << '\n';
}

RecordsFile read_records(std::istream& in) {
  RecordsFile f;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "meta") f.metas.push_back(meta_from_json(j));
      else if (kind == "rep") f.records.push_back(rep_from_json(j));
      else throw DataError("unknown record kind '" + kind + "'");
    } catch (const DataError&) {
      throw DataError("malformed record at line " + std::to_string(lineno));
    } catch (const std::exception&) {
      throw DataError("malformed record at line " + std::to_string(lineno));
    }
  }
  if (f.metas.empty()) throw DataError("records file has no meta line");
  return f;
}

std::string summary_to_json(const SimulationSummary& s) {
  ordered_json j;
  j["schema_version"] = s.meta.schema_version;
  ordered_json sc = meta_to_json(s.meta);
  sc.erase("kind");
  j["scenario"] = sc;
  ordered_json models;
  for (SimModel m : {SimModel::flexible, SimModel::two_step, SimModel::standard, SimModel::gee}) {
    const ModelSummary& ms = s.models.at(m);
    ordered_json mj;
    mj["bias"] = ms.bias;
    mj["esd"] = ms.esd;
    mj["type1_rate"] = ms.type1_rate;
    mj["n_singular"] = ms.n_singular;
    mj["n_failed"] = ms.n_failed;
    mj["n_used"] = ms.n_used;
    mj["correction_used"] = ms.correction_used;
    mj["estimates_comparable"] = ms.estimates_comparable;
    models[sim_model_name(m)] = mj;
  }
  j["models"] = models;
  j["n_singular_flexible"] = s.n_singular_flexible;
  j["n_singular_standard"] = s.n_singular_standard;
  return j.dump(2) + "\n";
}

std::string summary_to_csv(const SimulationSummary& s) {
  std::ostringstream out;
  out << "model,metric,value\n";
  out.precision(17);
  for (SimModel m : {SimModel::flexible, SimModel::two_step, SimModel::standard, SimModel::gee}) {
    const ModelSummary& ms = s.models.at(m);
    const char* name = sim_model_name(m);
    out << name << ",bias," << ms.bias << '\n';
    out << name << ",esd," << ms.esd << '\n';
    out << name << ",type1_rate," << ms.type1_rate << '\n';
    out << name << ",n_singular," << ms.n_singular << '\n';
    out << name << ",n_failed," << ms.n_failed << '\n';
    out << name << ",n_used," << ms.n_used << '\n';
    out << name << ",correction_used," << ms.correction_used << '\n';
  }
  return out.str();
}

std::string summary_to_table(const SimulationSummary& s) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "scenario %d, %s, N=%d, reps=%d (alpha=%.2f)\n", s.meta.scenario_id,
                family_name(s.meta.family), s.meta.n_clusters, s.meta.n_reps, s.meta.alpha);
  out << buf;
  std::snprintf(buf, sizeof buf, "%-10s %9s %9s %9s %10s %8s  %s\n", "model", "bias", "esd",
                "type1", "singular", "failed", "correction");
  out << buf;
  for (SimModel m : {SimModel::flexible, SimModel::two_step, SimModel::standard, SimModel::gee}) {
    const ModelSummary& ms = s.models.at(m);
    std::snprintf(buf, sizeof buf, "%-10s %9.3f %9.3f %9.3f %10d %8d  %s%s\n", sim_model_name(m),
                  ms.bias, ms.esd, ms.type1_rate, ms.n_singular, ms.n_failed,
                  ms.correction_used.c_str(), ms.estimates_comparable ? "" : " [estimates not comparable]");
    out << buf;
  }
  return out.str();
}

}  // namespace hetfx
