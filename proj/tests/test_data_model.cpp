#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <map>

#include "hetfx/data.hpp"
#include "hetfx/design.hpp"
#include "hetfx/errors.hpp"

using namespace hetfx;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = std::string("/tmp/hetfx_") + name;
  std::ofstream out(path);
  out << content;
  return path;
}

CsvSchema appendix_schema() {
  CsvSchema s;
  s.cluster = "clinic_id";
  s.treatment = "trt";
  s.subgroup = "sex";
  s.outcome = "y";
  return s;
}

}  // namespace

TEST_CASE("load_dataset maps an appendix-style CSV") {
  const std::string path = write_temp("appendix.csv",
                                      "clinic_id,sid,y,trt,sex\n"
                                      "1,1,3,0,1\n"
                                      "1,2,0,0,0\n"
                                      "2,3,1,1,1\n"
                                      "2,4,2,1,0\n"
                                      "5,5,4,0,1\n");
  const Dataset d = load_dataset(path, appendix_schema());
  CHECK(d.n_clusters == 3);  // ids 1,2,5 re-indexed densely
  CHECK(d.subgroup_levels == 2);
  CHECK(d.rows.size() == 5);
  for (const Subject& s : d.rows) {
    CHECK(s.cluster_id >= 0);
    CHECK(s.cluster_id < 3);
    CHECK((s.subgroup == 0 || s.subgroup == 1));
  }
}

TEST_CASE("treatment varying within a cluster is rejected") {
  const std::string path = write_temp("badtrt.csv",
                                      "clinic_id,sid,y,trt,sex\n"
                                      "1,1,3,0,1\n"
                                      "1,2,0,1,0\n");
  CHECK_THROWS_WITH_AS(load_dataset(path, appendix_schema()),
                       doctest::Contains("treatment varies within cluster"), DataError);
}

TEST_CASE("missing column and bad cells carry diagnostics") {
  const std::string path = write_temp("badcell.csv",
                                      "clinic_id,sid,y,trt,sex\n"
                                      "1,1,3,0,1\n"
                                      "1,2,oops,0,0\n");
  CHECK_THROWS_WITH_AS(load_dataset(path, appendix_schema()), doctest::Contains("row 2"),
                       DataError);

  CsvSchema missing = appendix_schema();
  missing.outcome = "nope";
  CHECK_THROWS_WITH_AS(load_dataset(path, missing), doctest::Contains("missing column"),
                       DataError);
}

TEST_CASE("per-cluster sizes survive loading") {
  // 12 clusters with a known size multiset; cross-checked against counts
  // taken straight from the text we wrote.
  std::map<int, int> truth;
  std::string csv = "clinic_id,sid,y,trt,sex\n";
  const int sizes[12] = {25, 50, 100, 150, 300, 25, 50, 100, 150, 300, 25, 50};
  int sid = 0;
  for (int c = 0; c < 12; ++c) {
    truth[c] = sizes[c];
    for (int j = 0; j < sizes[c]; ++j) {
      csv += std::to_string(c) + "," + std::to_string(sid++) + ",1," + (c < 6 ? "0" : "1") +
             "," + std::to_string(j % 2) + "\n";
    }
  }
  const Dataset d = load_dataset(write_temp("sizes.csv", csv), appendix_schema());
  const std::vector<int> got = d.cluster_sizes();
  REQUIRE(static_cast<int>(got.size()) == 12);
  for (int c = 0; c < 12; ++c) CHECK(got[static_cast<std::size_t>(c)] == truth[c]);
}

TEST_CASE("design columns, ordering and dummy coding") {
  std::vector<Subject> rows;
  int sid = 0;
  for (int c = 0; c < 4; ++c)
    for (int g = 0; g < 2; ++g)
      for (int r = 0; r < 3; ++r) {
        Subject s;
        s.cluster_id = c;
        s.subject_id = sid++;
        s.treatment = c >= 2 ? 1 : 0;
        s.subgroup = g;
        s.outcome = 0.1 * sid;
        s.covariates = {static_cast<double>(c)};  // cluster-level covariate
        rows.push_back(s);
      }
  const Dataset data = make_dataset(rows, {"baseline"});

  ModelSpec spec;
  SUBCASE("p=2 without covariates gives q=4") {
    const DesignMatrices d = build_design(data, spec);
    CHECK(d.q() == 4);
    CHECK(d.col_names[3] == "treatment:subgroup1");
    // subject with trt=1, gr=1 has row (1,1,1,1)
    bool found = false;
    for (int i = 0; i < d.n(); ++i)
      if (d.X(i, 1) == 1.0 && d.X(i, 2) == 1.0) {
        CHECK(d.X(i, 0) == 1.0);
        CHECK(d.X(i, 3) == 1.0);
        found = true;
      }
    CHECK(found);
  }
  SUBCASE("one baseline covariate lands in column 5") {
    spec.extra_covariates = {0};
    const DesignMatrices d = build_design(data, spec);
    CHECK(d.q() == 5);
    CHECK(d.col_names[4] == "baseline");
    // between/within classification is empirical
    CHECK(d.between_col[0]);   // intercept
    CHECK(d.between_col[1]);   // treatment
    CHECK(!d.between_col[2]);  // subgroup
    CHECK(!d.between_col[3]);  // interaction
    CHECK(d.between_col[4]);   // cluster-level covariate
    CHECK(d.q_between == 3);
    CHECK(d.q_within == 2);
  }
}

TEST_CASE("empty treatment-by-subgroup cell is a rank error") {
  std::vector<Subject> rows;
  int sid = 0;
  for (int c = 0; c < 4; ++c)
    for (int r = 0; r < 5; ++r) {
      Subject s;
      s.cluster_id = c;
      s.subject_id = sid++;
      s.treatment = c >= 2 ? 1 : 0;
      s.subgroup = s.treatment == 1 ? 0 : r % 2;  // no (trt=1, gr=1) cell
      s.outcome = 1.0;
      rows.push_back(s);
    }
  const Dataset data = make_dataset(rows);
  ModelSpec spec;
  CHECK_THROWS_AS(build_design(data, spec), DataError);
}

TEST_CASE("links, variance functions and unit deviances") {
  CHECK(inverse_link(Family::poisson, -1.0) == doctest::Approx(0.36788).epsilon(1e-4));
  CHECK(inverse_link(Family::bernoulli, 0.0) == doctest::Approx(0.5));
  CHECK(inverse_link(Family::gaussian, 0.8) == doctest::Approx(0.8));

  CHECK(variance_function(Family::bernoulli, 0.5) == doctest::Approx(0.25));
  CHECK(variance_function(Family::poisson, 2.0) == doctest::Approx(2.0));
  CHECK(variance_function(Family::gaussian, -3.7) == doctest::Approx(1.0));
  CHECK_THROWS_AS(variance_function(Family::poisson, 0.0), DataError);
  CHECK_THROWS_AS(variance_function(Family::bernoulli, 1.0), DataError);

  // inverse_link(link(mu)) = mu over the valid domain
  for (double mu : {1e-6, 0.01, 0.3, 0.5, 0.77, 0.999999}) {
    CHECK(inverse_link(Family::bernoulli, link(Family::bernoulli, mu)) ==
          doctest::Approx(mu).epsilon(1e-12));
  }
  for (double mu : {1e-8, 0.1, 1.0, 17.5, 1e6})
    CHECK(inverse_link(Family::poisson, link(Family::poisson, mu)) ==
          doctest::Approx(mu).epsilon(1e-12));

  // unit deviance is non-negative and zero only at y = mu
  for (double y : {0.0, 1.0, 3.0}) {
    for (double mu : {0.2, 1.0, 3.0}) {
      const double dp = unit_deviance(Family::poisson, y, mu);
      CHECK(dp >= -1e-15);
      if (y == mu) CHECK(dp == doctest::Approx(0.0).epsilon(1e-12));
      else CHECK(dp > 1e-12);
    }
  }
  CHECK(unit_deviance(Family::bernoulli, 1.0, 0.5) > 0.0);
  CHECK(unit_deviance(Family::gaussian, 2.0, 2.0) == 0.0);
}

TEST_CASE("outcome validation per family") {
  const double bad_count[] = {1.0, -2.0};
  CHECK_THROWS_AS(validate_outcome(Family::poisson, bad_count, 2), DataError);
  const double frac[] = {1.5};
  CHECK_THROWS_AS(validate_outcome(Family::poisson, frac, 1), DataError);
  const double bad_bin[] = {0.0, 2.0};
  CHECK_THROWS_AS(validate_outcome(Family::bernoulli, bad_bin, 2), DataError);
  const double ok[] = {0.0, 1.0};
  CHECK_NOTHROW(validate_outcome(Family::bernoulli, ok, 2));
}

TEST_CASE("CSV round-trip reproduces the design bit-identically") {
  std::vector<Subject> rows;
  int sid = 0;
  for (int c = 0; c < 6; ++c)
    for (int r = 0; r < 7; ++r) {
      Subject s;
      s.cluster_id = c;
      s.subject_id = sid++;
      s.treatment = c % 2;
      s.subgroup = (r + c) % 2;
      s.outcome = 0.123456789123456789 * (sid + 1) / 3.0;
      rows.push_back(s);
    }
  const Dataset data = make_dataset(rows);
  ModelSpec spec;
  const DesignMatrices d0 = build_design(data, spec);

  CsvSchema schema;
  const std::string path = "/tmp/hetfx_roundtrip.csv";
  write_dataset_csv(data, path, schema);
  const Dataset d1 = load_dataset(path, schema);
  const DesignMatrices dd1 = build_design(d1, spec);
  const Dataset d2 = load_dataset(path, schema);
  const DesignMatrices dd2 = build_design(d2, spec);

  REQUIRE(dd1.X.rows() == d0.X.rows());
  CHECK((dd1.X - d0.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK((dd1.y - d0.y).cwiseAbs().maxCoeff() == 0.0);
  CHECK((dd2.X - dd1.X).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("row order does not matter once loaded") {
  // shuffled rows produce the same canonical design
  std::vector<Subject> rows;
  int sid = 0;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 4; ++r) {
      Subject s;
      s.cluster_id = c;
      s.subject_id = sid++;
      s.treatment = c % 2;
      s.subgroup = r % 2;
      s.outcome = sid * 1.25;
      rows.push_back(s);
    }
  std::vector<Subject> shuffled = {rows[7], rows[2], rows[11], rows[0], rows[5], rows[9],
                                   rows[1], rows[10], rows[3], rows[8], rows[6], rows[4]};
  ModelSpec spec;
  const DesignMatrices a = build_design(make_dataset(rows), spec);
  const DesignMatrices b = build_design(make_dataset(shuffled), spec);
  CHECK((a.X - b.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.y - b.y).cwiseAbs().maxCoeff() == 0.0);
}
