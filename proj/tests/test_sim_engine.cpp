#include <doctest.h>

#include <cmath>
#include <sstream>

#include "hetfx/errors.hpp"
#include "hetfx/sim.hpp"

using namespace hetfx;

TEST_CASE("built-in scenarios carry the published parameters") {
  {
    const ScenarioConfig c = builtin_scenario(1, Family::poisson, 50, false);
    CHECK(c.beta_true[0] == doctest::Approx(-1.0));
    CHECK(c.beta_true[1] == doctest::Approx(-0.07));
    CHECK(c.beta_true[2] == doctest::Approx(-0.5));
    CHECK(c.beta_true[3] == 0.0);
    CHECK(c.Sigma(0, 0) == doctest::Approx(0.5));
    CHECK(c.Sigma(0, 1) == doctest::Approx(0.25));
    CHECK(c.Sigma(1, 1) == doctest::Approx(0.5));
    CHECK(c.cluster_sizes == std::vector<int>(50, 100));
  }
  {
    const ScenarioConfig c = builtin_scenario(2, Family::gaussian, 100, false);
    CHECK(c.Sigma(0, 0) == doctest::Approx(0.02));
    CHECK(c.Sigma(0, 1) == doctest::Approx(0.013));
    CHECK(c.Sigma(1, 1) == doctest::Approx(0.01));
    // scaling the whole matrix by 1/10 preserves the correlation
    const double corr0 = 0.13 / std::sqrt(0.2 * 0.1);
    const double corr2 = c.Sigma(0, 1) / std::sqrt(c.Sigma(0, 0) * c.Sigma(1, 1));
    CHECK(corr2 == doctest::Approx(corr0).epsilon(1e-12));
    CHECK(c.resid_var == doctest::Approx(0.64));
  }
  {
    const ScenarioConfig c = builtin_scenario(4, Family::bernoulli, 12, true);
    CHECK(c.true_model == TrueModel::standard);
    CHECK(c.sigma2_u == doctest::Approx(0.5));
    CHECK(c.beta_true[0] == doctest::Approx(-1.66));
    const std::vector<int> expect = {25, 50, 100, 150, 300, 25, 50, 100, 150, 300, 25, 50};
    CHECK(c.cluster_sizes == expect);
    CHECK(c.total_n() == 1325);
  }
  CHECK(builtin_scenario(4, Family::gaussian, 50, false).sigma2_u == doctest::Approx(0.2));

  CHECK_THROWS_AS(builtin_scenario(1, Family::gaussian, 12, false), DataError);
  CHECK_THROWS_AS(builtin_scenario(3, Family::gaussian, 50, false), DataError);
  CHECK_THROWS_AS(builtin_scenario(4, Family::gaussian, 12, false), DataError);
  CHECK_THROWS_AS(builtin_scenario(5, Family::gaussian, 50, false), DataError);
  ScenarioConfig odd = builtin_scenario(1, Family::gaussian, 50, false);
  odd.n_clusters = 49;
  odd.cluster_sizes.assign(49, 100);
  CHECK_THROWS_AS(odd.validate(), DataError);
}

TEST_CASE("generated datasets satisfy the construction invariants") {
  for (int scenario : {1, 3}) {
    const int nc = scenario == 1 ? 50 : 12;
    ScenarioConfig cfg = builtin_scenario(scenario, Family::poisson, nc, scenario == 3);
    cfg.base_seed = 11;
    for (int rep = 0; rep < 4; ++rep) {
      const Dataset data = generate_dataset(cfg, rep);
      CHECK(data.n_clusters == nc);
      // exact 1:1 arm split and within-cluster treatment constancy
      std::vector<int> arm(static_cast<std::size_t>(nc), -1);
      for (const Subject& s : data.rows) {
        int& a = arm[static_cast<std::size_t>(s.cluster_id)];
        if (a == -1) a = s.treatment;
        CHECK(a == s.treatment);
      }
      int ones = 0;
      for (int a : arm) ones += a;
      CHECK(ones == nc / 2);
      if (scenario == 3) {
        const std::vector<int> sizes = data.cluster_sizes();
        for (int c = 0; c < nc; ++c) {
          const int expect[5] = {25, 50, 100, 150, 300};
          CHECK(sizes[static_cast<std::size_t>(c)] == expect[c % 5]);
        }
      }
    }
  }
}

TEST_CASE("generator means match the inverse link at Sigma = 0") {
  ScenarioConfig cfg;
  cfg.scenario_id = 0;
  cfg.family = Family::poisson;
  cfg.n_clusters = 100;
  cfg.cluster_sizes.assign(100, 10000);
  cfg.true_model = TrueModel::flexible;
  cfg.Sigma.setZero();
  cfg.beta_true << -1.0, 0.0, 0.0, 0.0;
  cfg.base_seed = 5150;
  const Dataset data = generate_dataset(cfg, 0);
  double sum = 0.0;
  for (const Subject& s : data.rows) sum += s.outcome;
  const double mean = sum / static_cast<double>(data.rows.size());
  CHECK(std::abs(mean - std::exp(-1.0)) < 0.002);
}

TEST_CASE("subgroup labels are Bernoulli(1/2)") {
  ScenarioConfig cfg = builtin_scenario(1, Family::gaussian, 100, false);
  cfg.base_seed = 77;
  const Dataset data = generate_dataset(cfg, 0);  // n = 10000
  long ones = 0;
  for (const Subject& s : data.rows) ones += s.subgroup;
  const double frac = static_cast<double>(ones) / static_cast<double>(data.rows.size());
  CHECK(std::abs(frac - 0.5) < 3.0 * 0.005);
}

TEST_CASE("summarize matches hand-computed metrics") {
  SimMeta meta;
  meta.family = Family::gaussian;
  meta.truth_bmod = 2.0;
  meta.alpha = 0.05;
  meta.n_reps = 2;

  auto rec = [](int rep, double est, double p) {
    RepRecord r;
    r.rep_index = rep;
    r.model = SimModel::flexible;
    r.estimate = est;
    r.se = 1.0;
    r.p = p;
    r.reject = p < 0.05;
    r.converged = true;
    r.correction = "normal";
    return r;
  };
  const std::vector<RepRecord> records = {rec(0, 1.0, 0.04), rec(1, 3.0, 0.06)};
  const SimulationSummary s = summarize(records, meta);
  const ModelSummary& ms = s.models.at(SimModel::flexible);
  CHECK(ms.bias == doctest::Approx(0.0));              // mean(1,3) - 2
  CHECK(ms.esd == doctest::Approx(std::sqrt(2.0)));    // sd with n-1 denominator
  CHECK(ms.type1_rate == doctest::Approx(0.5));        // one of two p-values < alpha
  CHECK(ms.n_used == 2);
}

TEST_CASE("pooled records from two runs aggregate by recomputation") {
  // 4-record fixture: estimates 1,3 (run A) and 5,7 (run B), truth 4
  SimMeta meta;
  meta.truth_bmod = 4.0;
  meta.n_reps = 4;
  auto rec = [](int rep, double est, bool reject) {
    RepRecord r;
    r.rep_index = rep;
    r.model = SimModel::gee;
    r.estimate = est;
    r.se = 1.0;
    r.p = reject ? 0.01 : 0.5;
    r.reject = reject;
    r.converged = true;
    r.correction = "normal";
    return r;
  };
  const std::vector<RepRecord> records = {rec(0, 1.0, true), rec(1, 3.0, false),
                                          rec(0, 5.0, false), rec(1, 7.0, true)};
  const SimulationSummary s = summarize(records, meta);
  const ModelSummary& ms = s.models.at(SimModel::gee);
  // mean 4, bias 0; sd of (1,3,5,7) = sqrt(20/3); type1 2/4
  CHECK(ms.bias == doctest::Approx(0.0));
  CHECK(ms.esd == doctest::Approx(std::sqrt(20.0 / 3.0)));
  CHECK(ms.type1_rate == doctest::Approx(0.5));
}

TEST_CASE("records serialize and aggregate reproducibly") {
  ScenarioConfig cfg = builtin_scenario(4, Family::gaussian, 12, true);
  cfg.n_reps = 8;
  cfg.base_seed = 3;
  const SimulationRun run = run_scenario(cfg, 1);

  std::stringstream buf;
  write_records(buf, run.summary.meta, run.records);
  const RecordsFile f = read_records(buf);
  REQUIRE(f.metas.size() == 1);
  REQUIRE(f.records.size() == run.records.size());
  const SimulationSummary again = summarize(f.records, f.metas.front());
  CHECK(summary_to_json(again) == summary_to_json(run.summary));

  std::stringstream bad("{\"kind\":\"meta\"}\nnot json\n");
  CHECK_THROWS_WITH_AS(read_records(bad), doctest::Contains("line 2"), DataError);
}

TEST_CASE("worker count does not change the summary") {
  ScenarioConfig cfg = builtin_scenario(4, Family::gaussian, 12, true);
  cfg.n_reps = 12;
  cfg.base_seed = 42;
  const SimulationRun a = run_scenario(cfg, 1);
  const SimulationRun b = run_scenario(cfg, 4);
  const SimulationRun c = run_scenario(cfg, 4);
  CHECK(summary_to_json(a.summary) == summary_to_json(b.summary));
  CHECK(summary_to_json(b.summary) == summary_to_json(c.summary));
  // records identical apart from wall time
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].estimate == b.records[i].estimate);
    CHECK(a.records[i].reject == b.records[i].reject);
    CHECK(a.records[i].correction == b.records[i].correction);
  }
}

TEST_CASE("flexible GLMM holds the nominal level under scenario-1 truth at N=100") {
  ScenarioConfig cfg = builtin_scenario(1, Family::gaussian, 100, false);
  cfg.n_reps = 400;
  cfg.base_seed = 1001;
  const SimulationRun run = run_scenario(cfg, 1);
  const double t1 = run.summary.models.at(SimModel::flexible).type1_rate;
  const double half = 3.0 * std::sqrt(0.05 * 0.95 / 400.0);
  CHECK(t1 > 0.05 - half);
  CHECK(t1 < 0.05 + half);
}

TEST_CASE("GEE is no more efficient than the flexible GLMM (scenario 1, gaussian)") {
  ScenarioConfig cfg = builtin_scenario(1, Family::gaussian, 50, false);
  cfg.n_reps = 1000;
  cfg.base_seed = 2002;
  const SimulationRun run = run_scenario(cfg, 1);
  CHECK(run.summary.models.at(SimModel::gee).esd >=
        run.summary.models.at(SimModel::flexible).esd);
}

TEST_CASE("scenario-4 singular-fit rates sit in the published range") {
  {
    ScenarioConfig cfg = builtin_scenario(4, Family::gaussian, 50, false);
    cfg.n_reps = 300;
    cfg.base_seed = 9;
    const SimulationRun run = run_scenario(cfg, 1);
    const double frac =
        static_cast<double>(run.summary.n_singular_flexible) / static_cast<double>(cfg.n_reps);
    CHECK(frac > 0.30);  // published count 402/1000, +-3.5 binomial SE
    CHECK(frac < 0.50);
  }
  {
    ScenarioConfig cfg = builtin_scenario(4, Family::gaussian, 12, true);
    cfg.n_reps = 300;
    cfg.base_seed = 10;
    const SimulationRun run = run_scenario(cfg, 1);
    const double frac =
        static_cast<double>(run.summary.n_singular_flexible) / static_cast<double>(cfg.n_reps);
    CHECK(frac > 0.47);  // published count 574/1000
    CHECK(frac < 0.68);
  }
}
