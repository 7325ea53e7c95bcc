#pragma once

#include <cmath>
#include <vector>

#include "icar/error.hpp"
#include "icar/graph.hpp"
#include "icar/precision.hpp"
#include "icar/sparse_symmetric.hpp"

namespace icar {

// Intrinsic CAR prior with precision kappa * scaled_R, restricted to the
// sum-to-zero subspace of every component of size > 1.
//
// Scaled models (scale_model) multiply each component block by its
// constant c_k and give singletons a unit diagonal. Unscaled models
// (unscaled_model) keep the raw structure matrix, so singletons have a
// flat, improper prior and do not contribute to the kappa exponent.
struct ScaledCarModel {
  Graph graph;
  ComponentPartition partition;
  SparseSymmetric scaled_R;
  std::vector<double> component_constants;     // c_k per component; 1 for singletons
  std::vector<std::vector<std::size_t>> constraints;  // one index set per component of size > 1
  NormalizingInfo norm_info;
  std::vector<double> marginal_variances;      // of the raw R at kappa = 1, +inf on singletons
  bool scaled = true;

  std::size_t size() const { return graph.size(); }

  // Whether node i carries a proper N(0, 1/kappa) prior on its own.
  bool proper_singleton(std::size_t i) const {
    return partition.sizes[partition.labels[i]] == 1 && scaled;
  }
};

// kappa-dependent part of the log prior density:
//   kappa_exponent * log(kappa) - kappa/2 * x' R_scaled x.
inline double log_density(const Eigen::VectorXd& x, double kappa, const ScaledCarModel& model) {
  require(static_cast<std::size_t>(x.size()) == model.size(), "log_density: dimension mismatch");
  require(kappa > 0.0 && std::isfinite(kappa), "log_density: kappa must be positive");
  return model.norm_info.kappa_exponent.value() * std::log(kappa) - 0.5 * kappa * model.scaled_R.quadratic_form(x);
}

}  // namespace icar
