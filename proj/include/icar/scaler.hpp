#pragma once

// Constrained marginal variances of intrinsic CAR components and the
// per-component scaling that makes their geometric mean equal to one.
//
// For a connected component with structure block B, the variances under
// the sum-to-zero constraint (kappa = 1) are diag(B^+). Two routes:
//   dense:  eigendecomposition of B, O(m^3).
//   sparse: Cholesky of B + eps*I with a fill-reducing ordering, selected
//           inversion for diag((B + eps*I)^{-1}), then the rank-one
//           conditioning correction Var_i - (S1)_i^2 / (1'S1).

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "icar/car_model.hpp"
#include "icar/error.hpp"
#include "icar/graph.hpp"
#include "icar/precision.hpp"
#include "icar/selected_inversion.hpp"
#include "icar/sparse_symmetric.hpp"

namespace icar {

inline constexpr double infinite_variance = std::numeric_limits<double>::infinity();

enum class VarianceMethod { automatic, dense, sparse };
enum class MeanKind { geometric, arithmetic };

struct ScaleOptions {
  VarianceMethod method = VarianceMethod::automatic;
  MeanKind mean = MeanKind::geometric;
  std::size_t dense_limit = 5000;  // automatic: dense up to this component size
};

struct SparseVarianceOptions {
  bool validate = false;  // cross-check every component against the dense route
  double relative_tolerance = 1e-4;
};

namespace detail {

struct ComponentSpectrum {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;
  double null_tol = 0.0;
};

inline ComponentSpectrum component_spectrum(const Eigen::MatrixXd& block) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(block);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  ComponentSpectrum s{es.eigenvalues(), es.eigenvectors(), 0.0};
  s.null_tol = null_threshold(s.eigenvalues.size(), s.eigenvalues.maxCoeff());
  int nulls = 0;
  for (Eigen::Index j = 0; j < s.eigenvalues.size(); ++j) {
    if (s.eigenvalues[j] < -s.null_tol) throw NumericalError("structure block is not positive semi-definite");
    if (s.eigenvalues[j] <= s.null_tol) ++nulls;
  }
  if (nulls != 1)
    throw NumericalError("structure block has rank deficiency " + std::to_string(nulls) + ", expected 1");
  return s;
}

inline Eigen::VectorXd pseudo_inverse_diagonal(const ComponentSpectrum& s) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(s.eigenvalues.size());
  for (Eigen::Index j = 0; j < s.eigenvalues.size(); ++j)
    if (s.eigenvalues[j] > s.null_tol) d += s.eigenvectors.col(j).cwiseAbs2() / s.eigenvalues[j];
  return d;
}

inline double log_pseudo_determinant(const ComponentSpectrum& s) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < s.eigenvalues.size(); ++j)
    if (s.eigenvalues[j] > s.null_tol) acc += std::log(s.eigenvalues[j]);
  return acc;
}

// Grounds the last node: with G = inverse of the block minus that row and
// column (zero-padded), the constrained covariance is P G P, P = I - 11'/m.
inline Eigen::VectorXd sparse_component_variances(const SparseSymmetric& block) {
  const std::size_t m = block.dimension();
  std::vector<std::size_t> keep(m - 1);
  std::iota(keep.begin(), keep.end(), 0);
  const SelectedInverse si(block.block(keep), 0.0);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(Eigen::Index(m)), d = Eigen::VectorXd::Zero(Eigen::Index(m));
  g.head(Eigen::Index(m - 1)) = si.solve(Eigen::VectorXd::Ones(Eigen::Index(m - 1)));
  d.head(Eigen::Index(m - 1)) = si.diagonal();
  const double md = double(m);
  return (d - 2.0 * g / md).array() + g.sum() / (md * md);
}

// Matrix-tree route: |B|_* = m * det(B without its last row and column).
inline double sparse_log_pseudo_determinant(const SparseSymmetric& block) {
  const std::size_t m = block.dimension();
  std::vector<std::size_t> keep(m - 1);
  for (std::size_t i = 0; i + 1 < m; ++i) keep[i] = i;
  const Eigen::SparseMatrix<double> reduced = block.block(keep).full();
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> llt(reduced);
  if (llt.info() != Eigen::Success) throw NumericalError("reduced structure block is not positive definite");
  const Eigen::SparseMatrix<double> l = llt.matrixL();
  double acc = 0.0;
  for (Eigen::Index j = 0; j < l.cols(); ++j) acc += std::log(l.coeff(j, j));
  return std::log(static_cast<double>(m)) + 2.0 * acc;
}

inline void check_partition(const SparseSymmetric& r, const ComponentPartition& p) {
  require(r.dimension() == p.labels.size(), "structure matrix and partition dimensions differ");
}

}  // namespace detail

// Dense pseudoinverse of one component block.
inline Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& block) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(block);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  const auto& ev = es.eigenvalues();
  const double tol = null_threshold(ev.size(), ev.maxCoeff());
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  for (Eigen::Index j = 0; j < ev.size(); ++j) {
    if (ev[j] < -tol) throw NumericalError("pseudo_inverse: matrix is not positive semi-definite");
    if (ev[j] > tol) inv[j] = 1.0 / ev[j];
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

inline std::vector<double> marginal_variances_dense(const SparseSymmetric& r, const ComponentPartition& p) {
  detail::check_partition(r, p);
  std::vector<double> out(r.dimension(), infinite_variance);
  for (std::size_t k = 0; k < p.count(); ++k) {
    if (p.sizes[k] == 1) continue;
    const auto nodes = p.members(k);
    const auto d = detail::pseudo_inverse_diagonal(detail::component_spectrum(r.dense_block(nodes)));
    for (std::size_t a = 0; a < nodes.size(); ++a) out[nodes[a]] = d[static_cast<Eigen::Index>(a)];
  }
  return out;
}

inline std::vector<double> marginal_variances_sparse(const SparseSymmetric& r, const ComponentPartition& p,
                                                     const SparseVarianceOptions& opt = {}) {
  detail::check_partition(r, p);
  std::vector<double> out(r.dimension(), infinite_variance);
  for (std::size_t k = 0; k < p.count(); ++k) {
    if (p.sizes[k] == 1) continue;
    const auto nodes = p.members(k);
    const auto block = r.block(nodes);
    const Eigen::VectorXd v = detail::sparse_component_variances(block);
    if (opt.validate) {
      const auto ref = detail::pseudo_inverse_diagonal(detail::component_spectrum(block.dense()));
      const double err = ((v - ref).cwiseAbs().array() / ref.cwiseAbs().array()).maxCoeff();
      if (!(err <= opt.relative_tolerance))
        throw NumericalError("sparse marginal variances disagree with dense route (relative error " +
                             std::to_string(err) + ")");
    }
    for (std::size_t a = 0; a < nodes.size(); ++a) out[nodes[a]] = v[static_cast<Eigen::Index>(a)];
  }
  return out;
}

// Geometric mean by default; the arithmetic mean is for sensitivity runs.
inline double scaling_constant(const std::vector<double>& variances, MeanKind mean = MeanKind::geometric) {
  require(!variances.empty(), "scaling_constant: no variances");
  double acc = 0.0;
  for (double v : variances) {
    if (!(std::isfinite(v) && v > 0.0)) throw InputError("scaling_constant: variances must be finite and positive");
    acc += (mean == MeanKind::geometric) ? std::log(v) : v;
  }
  acc /= static_cast<double>(variances.size());
  return (mean == MeanKind::geometric) ? std::exp(acc) : acc;
}

namespace detail {

struct ComponentScaling {
  std::vector<double> variances;
  double log_pseudo_det = 0.0;  // of the raw block
};

inline ComponentScaling scale_component(const SparseSymmetric& r, const std::vector<std::size_t>& nodes,
                                        const ScaleOptions& opt) {
  const bool dense = opt.method == VarianceMethod::dense ||
                     (opt.method == VarianceMethod::automatic && nodes.size() <= opt.dense_limit);
  ComponentScaling cs;
  if (dense) {
    const auto spec = component_spectrum(r.dense_block(nodes));
    const Eigen::VectorXd d = pseudo_inverse_diagonal(spec);
    cs.variances.assign(d.data(), d.data() + d.size());
    cs.log_pseudo_det = log_pseudo_determinant(spec);
  } else {
    const auto block = r.block(nodes);
    const Eigen::VectorXd d = sparse_component_variances(block);
    cs.variances.assign(d.data(), d.data() + d.size());
    cs.log_pseudo_det = sparse_log_pseudo_determinant(block);
  }
  return cs;
}

inline ScaledCarModel build_model(const Graph& g, const ScaleOptions& opt, bool scaled) {
  ScaledCarModel m;
  m.graph = g;
  m.partition = connected_components(g);
  m.scaled = scaled;
  const SparseSymmetric r = structure_matrix(g);
  const auto& p = m.partition;

  m.component_constants.assign(p.count(), 1.0);
  m.marginal_variances.assign(g.size(), infinite_variance);
  std::vector<double> node_scale(g.size(), 1.0);
  double log_det = 0.0;
  for (std::size_t k = 0; k < p.count(); ++k) {
    if (p.sizes[k] == 1) continue;
    const auto nodes = p.members(k);
    const auto cs = scale_component(r, nodes, opt);
    for (std::size_t a = 0; a < nodes.size(); ++a) m.marginal_variances[nodes[a]] = cs.variances[a];
    const double c = scaled ? scaling_constant(cs.variances, opt.mean) : 1.0;
    m.component_constants[k] = c;
    for (std::size_t i : nodes) node_scale[i] = c;
    log_det += static_cast<double>(nodes.size() - 1) * std::log(c) + cs.log_pseudo_det;
    m.constraints.push_back(nodes);
  }

  std::vector<SparseSymmetric::Triplet> trips;
  for (const auto& [i, j, v] : r.entries()) {
    double value = v * node_scale[i];
    if (i == j && scaled && p.sizes[p.labels[i]] == 1) value = 1.0;
    trips.emplace_back(static_cast<int>(i), static_cast<int>(j), value);
  }
  m.scaled_R = SparseSymmetric(g.size(), std::move(trips));

  m.norm_info.gen_log_det = log_det;
  if (scaled) {
    m.norm_info.kappa_exponent = kappa_exponent(p);
  } else {
    for (std::size_t s : p.sizes)
      if (s > 1) m.norm_info.kappa_exponent.twice += static_cast<long long>(s) - 1;
  }
  return m;
}

}  // namespace detail

// Scales every component of size > 1 independently by the mean of its
// constrained marginal variances; singletons become N(0, 1/kappa).
inline ScaledCarModel scale_model(const Graph& g, const ScaleOptions& opt = {}) {
  return detail::build_model(g, opt, true);
}

// Raw structure matrix with the same per-component constraints.
inline ScaledCarModel unscaled_model(const Graph& g, const ScaleOptions& opt = {}) {
  return detail::build_model(g, opt, false);
}

}  // namespace icar
