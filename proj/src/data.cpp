#include "hetfx/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "hetfx/errors.hpp"

namespace hetfx {

std::vector<int> Dataset::cluster_sizes() const {
  std::vector<int> sizes(static_cast<std::size_t>(n_clusters), 0);
  for (const Subject& s : rows) ++sizes[static_cast<std::size_t>(s.cluster_id)];
  return sizes;
}

Dataset make_dataset(std::vector<Subject> rows, const std::vector<std::string>& covariate_names) {
  if (rows.empty()) throw DataError("dataset has no rows");

  // Dense re-index of cluster ids (ascending original id) and subgroup codes.
  std::map<int, int> cluster_map, subgroup_map;
  for (const Subject& s : rows) {
    cluster_map.emplace(s.cluster_id, 0);
    subgroup_map.emplace(s.subgroup, 0);
  }
  int next = 0;
  for (auto& kv : cluster_map) kv.second = next++;
  next = 0;
  for (auto& kv : subgroup_map) kv.second = next++;

  const std::size_t n_cov = covariate_names.size();
  for (Subject& s : rows) {
    s.cluster_id = cluster_map.at(s.cluster_id);
    s.subgroup = subgroup_map.at(s.subgroup);
    if (s.treatment != 0 && s.treatment != 1)
      throw DataError("treatment must be coded 0/1");
    if (s.covariates.size() != n_cov)
      throw DataError("inconsistent covariate count across rows");
    if (!std::isfinite(s.outcome)) throw DataError("non-finite outcome");
    for (double c : s.covariates)
      if (!std::isfinite(c)) throw DataError("non-finite covariate");
  }

  // Treatment must be constant within each cluster.
  std::vector<int> arm(cluster_map.size(), -1);
  for (const Subject& s : rows) {
    int& a = arm[static_cast<std::size_t>(s.cluster_id)];
    if (a == -1) a = s.treatment;
    else if (a != s.treatment)
      throw DataError("treatment varies within cluster " + std::to_string(s.cluster_id));
  }

  // Canonical row order: by (cluster, subject). Fitting is then independent
  // of the order rows arrived in, down to the last bit.
  std::stable_sort(rows.begin(), rows.end(), [](const Subject& a, const Subject& b) {
    if (a.cluster_id != b.cluster_id) return a.cluster_id < b.cluster_id;
    return a.subject_id < b.subject_id;
  });

  Dataset d;
  d.rows = std::move(rows);
  d.n_clusters = static_cast<int>(cluster_map.size());
  d.subgroup_levels = static_cast<int>(subgroup_map.size());
  d.covariate_names = covariate_names;
  return d;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& cell, long row, const std::string& col) {
  const char* b = cell.data();
  const char* e = b + cell.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t')) --e;
  double v = 0.0;
  const auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc{} || res.ptr != e || b == e)
    throw DataError("row " + std::to_string(row) + ": cannot parse '" + cell + "' in column '" +
                    col + "'");
  return v;
}

int parse_int(const std::string& cell, long row, const std::string& col) {
  const double v = parse_double(cell, row, col);
  if (std::abs(v - std::round(v)) > 1e-9)
    throw DataError("row " + std::to_string(row) + ": column '" + col + "' must be an integer, got '" +
                    cell + "'");
  return static_cast<int>(std::llround(v));
}

}  // namespace

Dataset load_dataset(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
  const std::vector<std::string> header = split_csv_line(line);

  auto col_index = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<long>(i);
    throw DataError("missing column '" + name + "' in '" + path + "'");
  };

  const long ci = col_index(schema.cluster);
  const long ti = col_index(schema.treatment);
  const long gi = col_index(schema.subgroup);
  const long yi = col_index(schema.outcome);
  std::vector<long> vi;
  for (const std::string& c : schema.covariates) vi.push_back(col_index(c));

  std::vector<Subject> rows;
  long rownum = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rownum;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(rownum) + ": expected " +
                      std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    Subject s;
    s.cluster_id = parse_int(cells[static_cast<std::size_t>(ci)], rownum, schema.cluster);
    s.subject_id = static_cast<int>(rownum - 1);
    s.treatment = parse_int(cells[static_cast<std::size_t>(ti)], rownum, schema.treatment);
    s.subgroup = parse_int(cells[static_cast<std::size_t>(gi)], rownum, schema.subgroup);
    s.outcome = parse_double(cells[static_cast<std::size_t>(yi)], rownum, schema.outcome);
    for (std::size_t k = 0; k < vi.size(); ++k)
      s.covariates.push_back(
          parse_double(cells[static_cast<std::size_t>(vi[k])], rownum, schema.covariates[k]));
    rows.push_back(std::move(s));
  }
  return make_dataset(std::move(rows), schema.covariates);
}

void write_dataset_csv(const Dataset& data, const std::string& path, const CsvSchema& schema) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << schema.cluster << ',' << schema.treatment << ',' << schema.subgroup << ','
      << schema.outcome;
  for (const std::string& c : schema.covariates) out << ',' << c;
  out << '\n';
  out.precision(17);
  for (const Subject& s : data.rows) {
    out << s.cluster_id << ',' << s.treatment << ',' << s.subgroup << ',' << s.outcome;
    for (double c : s.covariates) out << ',' << c;
    out << '\n';
  }
}

}  // namespace hetfx
