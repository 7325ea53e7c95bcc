#pragma once

// Selected inversion of a sparse SPD matrix: the entries of A^{-1} on the
// sparsity pattern of its Cholesky factor, via the Takahashi recursions
//
//   S_ij = delta_ij / L_jj^2 - (1 / L_jj) * sum_{k > j, k in col j} L_kj S_ik
//
// processed from the last column backwards. The filled pattern is closed
// under these recursions, so every S_ik needed is already available.

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "icar/error.hpp"
#include "icar/sparse_symmetric.hpp"

namespace icar {

class SelectedInverse {
 public:
  using Factor = Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>>;

  // Factorizes A = B + shift * I (B in upper symmetric storage).
  SelectedInverse(const SparseSymmetric& b, double shift) {
    const auto n = static_cast<Eigen::Index>(b.dimension());
    Eigen::SparseMatrix<double> a = b.full();
    for (Eigen::Index i = 0; i < n; ++i) a.coeffRef(i, i) += shift;
    a.makeCompressed();
    factor_.compute(a);
    if (factor_.info() != Eigen::Success) throw NumericalError("sparse Cholesky factorization failed");
    l_ = factor_.matrixL();
    l_.makeCompressed();
    run_recursions();
  }

  // diag(A^{-1}) in the original ordering.
  Eigen::VectorXd diagonal() const {
    const auto n = l_.rows();
    const auto& perm = factor_.permutationP().indices();
    Eigen::VectorXd d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int pi = perm[i];
      d[i] = s_[static_cast<std::size_t>(l_.outerIndexPtr()[pi])];  // diagonal leads each column
    }
    return d;
  }

  // (A^{-1})_ij if (i, j) lies on the filled pattern, original ordering.
  std::optional<double> entry(Eigen::Index i, Eigen::Index j) const {
    const auto& perm = factor_.permutationP().indices();
    int pi = perm[i], pj = perm[j];
    if (pi < pj) std::swap(pi, pj);
    const auto p = find(pi, pj);
    if (p < 0) return std::nullopt;
    return s_[static_cast<std::size_t>(p)];
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return factor_.solve(rhs); }

  // log det A from the factor.
  double log_determinant() const {
    double s = 0.0;
    for (Eigen::Index j = 0; j < l_.cols(); ++j) s += std::log(l_.valuePtr()[l_.outerIndexPtr()[j]]);
    return 2.0 * s;
  }

  std::size_t factor_nonzeros() const { return static_cast<std::size_t>(l_.nonZeros()); }

 private:
  // Position of L(row, col) in the value array, -1 if structurally zero.
  Eigen::Index find(int row, int col) const {
    const int* begin = l_.innerIndexPtr() + l_.outerIndexPtr()[col];
    const int* end = l_.innerIndexPtr() + l_.outerIndexPtr()[col + 1];
    const int* it = std::lower_bound(begin, end, row);
    if (it == end || *it != row) return -1;
    return it - l_.innerIndexPtr();
  }

  void run_recursions() {
    const auto n = static_cast<int>(l_.cols());
    const int* outer = l_.outerIndexPtr();
    const int* inner = l_.innerIndexPtr();
    const double* val = l_.valuePtr();
    s_.assign(static_cast<std::size_t>(l_.nonZeros()), 0.0);

    for (int j = n - 1; j >= 0; --j) {
      const int start = outer[j], stop = outer[j + 1];
      if (inner[start] != j) throw NumericalError("selected inversion: factor column lacks its diagonal");
      const double ljj = val[start];
      // off-diagonal entries of column j, from the bottom up
      for (int p = stop - 1; p > start; --p) {
        const int i = inner[p];
        double acc = 0.0;
        for (int q = start + 1; q < stop; ++q) {
          const int k = inner[q];
          const Eigen::Index pos = (k >= i) ? find(k, i) : find(i, k);
          if (pos < 0) throw NumericalError("selected inversion: pattern not closed");
          acc += val[q] * s_[static_cast<std::size_t>(pos)];
        }
        s_[static_cast<std::size_t>(p)] = -acc / ljj;
      }
      double acc = 0.0;
      for (int q = start + 1; q < stop; ++q) acc += val[q] * s_[static_cast<std::size_t>(q)];
      s_[static_cast<std::size_t>(start)] = 1.0 / (ljj * ljj) - acc / ljj;
    }
  }

  Factor factor_;
  Eigen::SparseMatrix<double> l_;
  std::vector<double> s_;
};

}  // namespace icar
