#pragma once

// Intrinsic CAR structure matrices and the ingredients of the normalizing
// constant Z_n(kappa) = |R|_*^{1/2} prod_k Z_{n_k}(kappa).

#include <Eigen/Eigenvalues>

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "icar/error.hpp"
#include "icar/graph.hpp"
#include "icar/sparse_symmetric.hpp"

namespace icar {

// Non-negative multiple of 1/2, stored as its double.
struct HalfInteger {
  long long twice = 0;

  double value() const { return 0.5 * static_cast<double>(twice); }
  friend bool operator==(HalfInteger, HalfInteger) = default;

  std::string str() const {
    return (twice % 2 == 0) ? std::to_string(twice / 2) : std::to_string(twice) + "/2";
  }
  friend std::ostream& operator<<(std::ostream& os, HalfInteger h) { return os << h.str(); }
};

struct NormalizingInfo {
  HalfInteger kappa_exponent;  // power of kappa in Z_n(kappa)
  double gen_log_det = 0.0;    // log |R_scaled|_*
};

// Diagonal = degree, -1 per edge. Singleton rows hold an explicit zero.
inline SparseSymmetric structure_matrix(const Graph& g) {
  std::vector<SparseSymmetric::Triplet> trips;
  trips.reserve(g.size() + g.edge_count());
  for (std::size_t i = 0; i < g.size(); ++i)
    trips.emplace_back(static_cast<int>(i), static_cast<int>(i), static_cast<double>(g.degree(i)));
  for (auto [i, j] : g.edges()) trips.emplace_back(static_cast<int>(i), static_cast<int>(j), -1.0);
  return SparseSymmetric(g.size(), std::move(trips));
}

// Each singleton contributes 1/2, each component of size m > 1 contributes (m-1)/2.
inline HalfInteger kappa_exponent(const ComponentPartition& p) {
  HalfInteger h;
  for (std::size_t s : p.sizes) h.twice += (s == 1) ? 1 : static_cast<long long>(s) - 1;
  return h;
}

// Eigenvalues at or below this are treated as exactly zero.
inline double null_threshold(Eigen::Index dim, double lambda_max) {
  return static_cast<double>(dim) * std::max(lambda_max, 0.0) * 1e-12;
}

// Sum of log non-zero eigenvalues, block by block. Each component of size
// > 1 must have exactly one null direction (its constant vector); a
// singleton block is either exactly null or a positive scalar.
inline double generalized_log_determinant(const SparseSymmetric& m, const ComponentPartition& p) {
  require(m.dimension() == p.labels.size(), "generalized_log_determinant: dimension mismatch");
  double log_det = 0.0;
  for (std::size_t k = 0; k < p.count(); ++k) {
    const auto nodes = p.members(k);
    if (nodes.size() == 1) {
      const double v = m.coeff(nodes[0], nodes[0]);
      if (v < 0.0) throw NumericalError("generalized_log_determinant: negative singleton diagonal");
      if (v > 0.0) log_det += std::log(v);
      continue;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.dense_block(nodes), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("generalized_log_determinant: eigensolver failed");
    const auto& ev = es.eigenvalues();
    const double tol = null_threshold(ev.size(), ev.maxCoeff());
    int nulls = 0;
    for (Eigen::Index j = 0; j < ev.size(); ++j) {
      if (ev[j] < -tol) throw NumericalError("generalized_log_determinant: matrix is not positive semi-definite");
      if (ev[j] <= tol)
        ++nulls;
      else
        log_det += std::log(ev[j]);
    }
    if (nulls != 1)
      throw NumericalError("generalized_log_determinant: component " + std::to_string(k) + " has rank deficiency " +
                           std::to_string(nulls) + ", expected 1");
  }
  return log_det;
}

}  // namespace icar
