#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "icar/error.hpp"

namespace icar {

// Symmetric sparse matrix holding only the upper triangle (row <= col).
// Explicit zeros are kept, so singleton rows still own a diagonal slot.
class SparseSymmetric {
 public:
  using Storage = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
  using Triplet = Eigen::Triplet<double, int>;

  SparseSymmetric() = default;

  // Triplets may come from either triangle; lower ones are mirrored.
  // Duplicate positions are summed.
  SparseSymmetric(std::size_t n, std::vector<Triplet> triplets) : upper_(idx(n), idx(n)) {
    for (auto& t : triplets) {
      require(t.row() >= 0 && t.col() >= 0 && t.row() < idx(n) && t.col() < idx(n),
              "sparse entry out of range");
      if (t.row() > t.col()) t = Triplet(t.col(), t.row(), t.value());
    }
    upper_.setFromTriplets(triplets.begin(), triplets.end());
    upper_.makeCompressed();
  }

  std::size_t dimension() const { return static_cast<std::size_t>(upper_.rows()); }
  const Storage& upper() const { return upper_; }
  std::size_t stored_entries() const { return static_cast<std::size_t>(upper_.nonZeros()); }

  double coeff(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    return upper_.coeff(idx(i), idx(j));
  }

  Storage full() const { return Storage(upper_.selfadjointView<Eigen::Upper>()); }
  Eigen::MatrixXd dense() const { return Eigen::MatrixXd(full()); }

  Eigen::VectorXd diagonal() const { return upper_.diagonal(); }

  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const {
    require(static_cast<std::size_t>(x.size()) == dimension(), "dimension mismatch in multiply");
    return upper_.selfadjointView<Eigen::Upper>() * x;
  }

  double quadratic_form(const Eigen::VectorXd& x) const {
    require(static_cast<std::size_t>(x.size()) == dimension(), "dimension mismatch in quadratic form");
    double q = 0.0;
    for (int c = 0; c < upper_.outerSize(); ++c) {
      for (Storage::InnerIterator it(upper_, c); it; ++it) {
        const double v = it.value() * x[it.row()] * x[c];
        q += (it.row() == c) ? v : 2.0 * v;
      }
    }
    return q;
  }

  // Dense principal submatrix on the given (ascending or not) indices.
  Eigen::MatrixXd dense_block(const std::vector<std::size_t>& nodes) const {
    const auto m = static_cast<Eigen::Index>(nodes.size());
    Eigen::MatrixXd b(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index c = a; c < m; ++c) b(a, c) = b(c, a) = coeff(nodes[a], nodes[c]);
    return b;
  }

  // Sparse principal submatrix (upper storage).
  SparseSymmetric block(const std::vector<std::size_t>& nodes) const {
    std::vector<int> local(dimension(), -1);
    for (std::size_t a = 0; a < nodes.size(); ++a) local[nodes[a]] = static_cast<int>(a);
    std::vector<Triplet> trips;
    for (std::size_t a = 0; a < nodes.size(); ++a) {
      const int c = idx(nodes[a]);
      for (Storage::InnerIterator it(upper_, c); it; ++it) {
        const int r = local[static_cast<std::size_t>(it.row())];
        if (r >= 0) trips.emplace_back(r, static_cast<int>(a), it.value());
      }
    }
    return SparseSymmetric(nodes.size(), std::move(trips));
  }

  friend bool operator==(const SparseSymmetric& a, const SparseSymmetric& b) {
    if (a.dimension() != b.dimension() || a.stored_entries() != b.stored_entries()) return false;
    return a.entries() == b.entries();
  }

  // (row, col, value) with row <= col in column-major order.
  std::vector<std::tuple<std::size_t, std::size_t, double>> entries() const {
    std::vector<std::tuple<std::size_t, std::size_t, double>> out;
    out.reserve(stored_entries());
    for (int c = 0; c < upper_.outerSize(); ++c)
      for (Storage::InnerIterator it(upper_, c); it; ++it)
        out.emplace_back(static_cast<std::size_t>(it.row()), static_cast<std::size_t>(c), it.value());
    return out;
  }

 private:
  static int idx(std::size_t i) { return static_cast<int>(i); }
  Storage upper_;
};

// Matrix Market coordinate, real, symmetric: lower triangle, 1-based,
// values printed with round-trip precision.
inline void write_matrix_market(const SparseSymmetric& m, std::ostream& out) {
  auto entries = m.entries();
  // lower triangle in column-major order == upper triangle in row-major order
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  out << "%%MatrixMarket matrix coordinate real symmetric\n";
  out << m.dimension() << ' ' << m.dimension() << ' ' << entries.size() << '\n';
  char buf[64];
  for (const auto& [r, c, v] : entries) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << (c + 1) << ' ' << (r + 1) << ' ' << buf << '\n';
  }
}

inline SparseSymmetric read_matrix_market(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "matrix market: empty input");
  require(line.rfind("%%MatrixMarket matrix coordinate real symmetric", 0) == 0,
          "matrix market: expected 'coordinate real symmetric' banner");
  while (std::getline(in, line) && !line.empty() && line[0] == '%') {
  }
  std::istringstream hs(line);
  std::size_t rows = 0, cols = 0, nnz = 0;
  require(static_cast<bool>(hs >> rows >> cols >> nnz) && rows == cols && rows > 0,
          "matrix market: malformed size line");
  std::vector<SparseSymmetric::Triplet> trips;
  trips.reserve(nnz);
  for (std::size_t k = 0; k < nnz; ++k) {
    std::size_t r = 0, c = 0;
    double v = 0.0;
    require(static_cast<bool>(in >> r >> c >> v), "matrix market: truncated entry list");
    require(r >= 1 && c >= 1 && r <= rows && c <= cols, "matrix market: index out of range");
    trips.emplace_back(static_cast<int>(r - 1), static_cast<int>(c - 1), v);
  }
  return SparseSymmetric(rows, std::move(trips));
}

}  // namespace icar
