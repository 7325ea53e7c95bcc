#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "icar/error.hpp"

namespace icar {

struct DiseaseMappingData {
  std::vector<double> y;         // observed counts (any real value in Gaussian mode)
  std::vector<double> expected;  // E_i > 0
  Eigen::MatrixXd covariates;    // n x p, may have zero columns
  std::vector<std::string> covariate_names;

  std::size_t size() const { return y.size(); }

  void validate(bool counts) const {
    require(expected.size() == y.size(), "data: counts and expected differ in length");
    require(covariates.cols() == 0 || static_cast<std::size_t>(covariates.rows()) == y.size(),
            "data: covariate rows differ from count length");
    require(covariate_names.size() == static_cast<std::size_t>(covariates.cols()),
            "data: covariate names do not match columns");
    for (std::size_t i = 0; i < y.size(); ++i) {
      require(expected[i] > 0.0 && std::isfinite(expected[i]),
              "data: expected count must be positive (row " + std::to_string(i + 1) + ")");
      require(std::isfinite(y[i]), "data: non-finite observation (row " + std::to_string(i + 1) + ")");
      if (counts)
        require(y[i] >= 0.0 && std::floor(y[i]) == y[i],
                "data: counts must be non-negative integers (row " + std::to_string(i + 1) + ")");
    }
  }
};

struct CovariateColumn {
  std::string name;
  double multiplier = 1.0;  // applied on read, e.g. 0.1 for a percentage in tens
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r\"");
    const auto e = cell.find_last_not_of(" \t\r\"");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, std::size_t line_no, const std::string& column) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size())
    throw InputError("data line " + std::to_string(line_no) + ": column " + column + " is not a number: '" + s + "'");
  return v;
}

}  // namespace detail

// CSV with a header row. Counts, E and Region are mandatory; Region must be
// a permutation of 1..n and determines the node each row belongs to.
inline DiseaseMappingData read_disease_csv(std::istream& in, const std::vector<CovariateColumn>& covariates = {}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) break;
  }
  const auto header = detail::split_csv_line(line);
  auto column = [&](const std::string& name) -> std::size_t {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return c;
    throw InputError("data: missing column '" + name + "'");
  };
  const std::size_t c_counts = column("Counts"), c_e = column("E"), c_region = column("Region");
  std::vector<std::size_t> c_cov;
  for (const auto& cv : covariates) c_cov.push_back(column(cv.name));

  struct Row {
    double y, e;
    long long region;
    std::vector<double> z;
    std::size_t line_no;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw InputError("data line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " fields, got " + std::to_string(cells.size()));
    Row r{detail::parse_number(cells[c_counts], line_no, "Counts"), detail::parse_number(cells[c_e], line_no, "E"), 0,
          {}, line_no};
    const double region = detail::parse_number(cells[c_region], line_no, "Region");
    if (std::floor(region) != region) throw InputError("data line " + std::to_string(line_no) + ": Region must be an integer");
    r.region = static_cast<long long>(region);
    for (std::size_t k = 0; k < c_cov.size(); ++k)
      r.z.push_back(covariates[k].multiplier * detail::parse_number(cells[c_cov[k]], line_no, covariates[k].name));
    rows.push_back(std::move(r));
  }
  require(!rows.empty(), "data: no rows");

  const std::size_t n = rows.size();
  DiseaseMappingData d;
  d.y.assign(n, 0.0);
  d.expected.assign(n, 0.0);
  d.covariates = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(covariates.size()));
  for (const auto& cv : covariates) d.covariate_names.push_back(cv.name);
  std::vector<bool> seen(n, false);
  for (const auto& r : rows) {
    if (r.region < 1 || static_cast<std::size_t>(r.region) > n)
      throw InputError("data line " + std::to_string(r.line_no) + ": Region " + std::to_string(r.region) +
                       " outside 1.." + std::to_string(n));
    const auto i = static_cast<std::size_t>(r.region - 1);
    if (seen[i]) throw InputError("data line " + std::to_string(r.line_no) + ": Region " + std::to_string(r.region) + " repeated");
    seen[i] = true;
    d.y[i] = r.y;
    d.expected[i] = r.e;
    for (std::size_t k = 0; k < r.z.size(); ++k) d.covariates(Eigen::Index(i), Eigen::Index(k)) = r.z[k];
  }
  return d;
}

}  // namespace icar
