#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <random>

#include "icar/precision.hpp"
#include "icar/scaler.hpp"
#include "icar/selected_inversion.hpp"
#include "test_util.hpp"

using namespace icar;

namespace {

// constrained variances of a connected block B: diag((B + 11'/m)^{-1}) - 1/m
Eigen::VectorXd constrained_variances_oracle(const Eigen::MatrixXd& b) {
  const auto m = b.rows();
  const Eigen::MatrixXd j = Eigen::MatrixXd::Constant(m, m, 1.0 / double(m));
  const Eigen::MatrixXd inv = (b + j).inverse();
  return inv.diagonal().array() - 1.0 / double(m);
}

std::vector<double> dense_vars(const Graph& g) {
  return marginal_variances_dense(structure_matrix(g), connected_components(g));
}

}  // namespace

TEST(DenseVariances, SixConnectedExactFractions) {
  const auto v = dense_vars(testutil::six_connected());
  const std::vector<double> exact{19.0 / 36, 19.0 / 36, 7.0 / 36, 19.0 / 36, 4.0 / 9, 4.0 / 9};
  const std::vector<double> printed{0.53, 0.53, 0.19, 0.53, 0.44, 0.44};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(v[i], exact[i], 1e-12);
    EXPECT_NEAR(std::round(v[i] * 100) / 100, printed[i], 1e-12) << "node " << i + 1;
  }
}

TEST(DenseVariances, SixDisconnected) {
  const auto v = dense_vars(testutil::six_disconnected());
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(v[i], 2.0 / 9, 1e-12);
  EXPECT_NEAR(v[3], 0.25, 1e-12);
  EXPECT_NEAR(v[4], 0.25, 1e-12);
  EXPECT_TRUE(std::isinf(v[5]));
}

TEST(DenseVariances, PairIsQuarter) {
  const auto v = dense_vars(Graph(2, {{0, 1}}));
  EXPECT_NEAR(v[0], 0.25, 1e-14);
  EXPECT_NEAR(v[1], 0.25, 1e-14);
}

TEST(DenseVariances, AgreesWithRankOneOracle) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 20; ++t) {
    const Graph g = testutil::spatial_graph(10 + rng() % 60, 4, rng);
    const auto v = dense_vars(g);
    const auto o = constrained_variances_oracle(structure_matrix(g).dense());
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(v[i], o[Eigen::Index(i)], 1e-10 * o[Eigen::Index(i)]);
  }
}

TEST(SparseVariances, SixConnectedTriangleAndLattice) {
  for (const Graph& g : {testutil::six_connected(), testutil::six_disconnected(), testutil::lattice(30, 30)}) {
    const auto r = structure_matrix(g);
    const auto p = connected_components(g);
    EXPECT_LT(testutil::max_relative_error(marginal_variances_sparse(r, p), marginal_variances_dense(r, p)), 1e-4);
  }
  const Graph tri(3, {{0, 1}, {0, 2}, {1, 2}});
  for (double v : marginal_variances_sparse(structure_matrix(tri), connected_components(tri))) EXPECT_NEAR(v, 2.0 / 9, 1e-4);
}

TEST(SparseVariances, ValidateOptionCrossChecks) {
  const Graph g = testutil::lattice(8, 9);
  EXPECT_NO_THROW(marginal_variances_sparse(structure_matrix(g), connected_components(g), {true, 1e-4}));
}

TEST(SparseVariances, RandomSpatialGraphs) {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 10; ++t) {
    const Graph g = testutil::spatial_graph(50 + rng() % 300, 3 + rng() % 3, rng);
    const auto r = structure_matrix(g);
    const auto p = connected_components(g);
    EXPECT_LT(testutil::max_relative_error(marginal_variances_sparse(r, p), marginal_variances_dense(r, p)), 1e-4);
  }
}

TEST(SelectedInverse, MatchesDenseInverseOnPattern) {
  std::mt19937_64 rng(4);
  const Graph g = testutil::spatial_graph(80, 4, rng);
  const auto r = structure_matrix(g);
  const SelectedInverse si(r, 0.5);
  Eigen::MatrixXd a = r.dense() + 0.5 * Eigen::MatrixXd::Identity(80, 80);
  const Eigen::MatrixXd inv = a.inverse();
  const Eigen::VectorXd d = si.diagonal();
  for (int i = 0; i < 80; ++i) EXPECT_NEAR(d[i], inv(i, i), 1e-12);
  for (auto [i, j] : g.edges()) {
    const auto e = si.entry(i, j);
    if (e) { EXPECT_NEAR(*e, inv(Eigen::Index(i), Eigen::Index(j)), 1e-12); }
  }
  EXPECT_NEAR(si.log_determinant(), std::log(a.determinant()), 1e-9);
}

TEST(ScalingConstant, Examples) {
  EXPECT_NEAR(scaling_constant(dense_vars(testutil::six_connected())), 0.4219, 5e-4);
  EXPECT_NEAR(scaling_constant({0.7, 0.7, 0.7, 0.7}), 0.7, 1e-15);
  EXPECT_NEAR(scaling_constant({2.0 / 9, 2.0 / 9, 2.0 / 9}), 2.0 / 9, 1e-15);
  EXPECT_NEAR(scaling_constant({1.0, 4.0}, MeanKind::arithmetic), 2.5, 1e-15);
  EXPECT_NEAR(scaling_constant({1.0, 4.0}), 2.0, 1e-15);
  EXPECT_THROW(scaling_constant({}), InputError);
  EXPECT_THROW(scaling_constant({1.0, infinite_variance}), InputError);
}

TEST(ScaleModel, SixConnected) {
  const Graph g = testutil::six_connected();
  const auto m = scale_model(g);
  const double c = m.component_constants.at(0);
  EXPECT_NEAR(c, 0.4219, 5e-4);
  EXPECT_TRUE(m.scaled_R.dense().isApprox(c * structure_matrix(g).dense(), 1e-15));
  ASSERT_EQ(m.constraints.size(), 1u);
  EXPECT_EQ(m.constraints[0].size(), 6u);
  EXPECT_EQ(m.norm_info.kappa_exponent.str(), "5/2");
}

TEST(ScaleModel, SixDisconnectedBlocks) {
  const auto m = scale_model(testutil::six_disconnected());
  EXPECT_NEAR(m.component_constants[0], 2.0 / 9, 1e-12);
  EXPECT_NEAR(m.component_constants[1], 0.25, 1e-12);
  EXPECT_EQ(m.component_constants[2], 1.0);
  Eigen::MatrixXd want = Eigen::MatrixXd::Zero(6, 6);
  want.topLeftCorner(3, 3) << 2, -1, -1, -1, 2, -1, -1, -1, 2;
  want.topLeftCorner(3, 3) *= 2.0 / 9;
  want.block(3, 3, 2, 2) << 0.25, -0.25, -0.25, 0.25;
  want(5, 5) = 1.0;
  EXPECT_TRUE(m.scaled_R.dense().isApprox(want, 1e-12));
  EXPECT_EQ(m.constraints, (std::vector<std::vector<std::size_t>>{{0, 1, 2}, {3, 4}}));
  EXPECT_EQ(m.scaled_R.coeff(5, 5), 1.0);
}

TEST(ScaleModel, AllSingletonsGiveIdentity) {
  const auto m = scale_model(Graph(5, {}));
  EXPECT_EQ(m.scaled_R.dense(), Eigen::MatrixXd::Identity(5, 5));
  EXPECT_TRUE(m.constraints.empty());
  EXPECT_EQ(m.norm_info.gen_log_det, 0.0);
}

TEST(ScaleModel, GeneralizedLogDetMatchesPrecisionCore) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    const Graph g = testutil::random_graph(3 + rng() % 30, 0.12, rng);
    const auto m = scale_model(g);
    EXPECT_NEAR(m.norm_info.gen_log_det, generalized_log_determinant(m.scaled_R, m.partition),
                1e-9 * std::max(1.0, std::abs(m.norm_info.gen_log_det)));
    const auto u = unscaled_model(g);
    EXPECT_NEAR(u.norm_info.gen_log_det, generalized_log_determinant(u.scaled_R, u.partition),
                1e-9 * std::max(1.0, std::abs(u.norm_info.gen_log_det)));
  }
}

TEST(ScaleModel, SparseMethodMatchesDense) {
  const Graph g = testutil::lattice(12, 15);
  const auto d = scale_model(g, {VarianceMethod::dense});
  const auto s = scale_model(g, {VarianceMethod::sparse});
  EXPECT_NEAR(s.component_constants[0] / d.component_constants[0], 1.0, 1e-4);
  EXPECT_NEAR(s.norm_info.gen_log_det, d.norm_info.gen_log_det, 1e-6 * std::abs(d.norm_info.gen_log_det));
}

TEST(ScaleModel, UnscaledKeepsRawMatrix) {
  const Graph g = testutil::six_disconnected();
  const auto m = unscaled_model(g);
  EXPECT_EQ(m.scaled_R.dense(), structure_matrix(g).dense());
  EXPECT_FALSE(m.proper_singleton(5));
  EXPECT_EQ(m.norm_info.kappa_exponent.str(), "3/2");
}

// ---- properties ----

class ScalerProperties : public ::testing::TestWithParam<int> {};

TEST_P(ScalerProperties, PseudoInverseIdentities) {
  std::mt19937_64 rng(500 + GetParam());
  const Graph g = testutil::spatial_graph(5 + rng() % 50, 3, rng);
  const Eigen::MatrixXd b = structure_matrix(g).dense();
  const Eigen::MatrixXd p = pseudo_inverse(b);
  const double s = b.norm();
  EXPECT_LT((b * p * b - b).norm(), 1e-8 * s);
  EXPECT_LT((p * b * p - p).norm(), 1e-8 * p.norm());
  EXPECT_LT((p - p.transpose()).norm(), 1e-12 * p.norm());
  EXPECT_LT((p * Eigen::VectorXd::Ones(b.rows())).norm(), 1e-8 * p.norm());
}

TEST_P(ScalerProperties, ScaledBlocksHaveUnitGeometricMean) {
  std::mt19937_64 rng(600 + GetParam());
  const Graph g = testutil::random_graph(4 + rng() % 40, 0.1, rng);
  const auto m = scale_model(g);
  const auto v = marginal_variances_dense(m.scaled_R, m.partition);
  for (std::size_t k = 0; k < m.partition.count(); ++k) {
    const auto nodes = m.partition.members(k);
    if (nodes.size() == 1) {
      EXPECT_EQ(m.scaled_R.coeff(nodes[0], nodes[0]), 1.0);
      continue;
    }
    std::vector<double> block;
    for (auto i : nodes) block.push_back(v[i]);
    EXPECT_NEAR(scaling_constant(block), 1.0, 1e-8);
  }
  std::size_t constrained = 0;
  for (auto s : m.partition.sizes) constrained += s > 1;
  EXPECT_EQ(m.constraints.size(), constrained);
}

TEST_P(ScalerProperties, ComponentLocality) {
  std::mt19937_64 rng(700 + GetParam());
  const Graph g = testutil::random_graph(10 + rng() % 30, 0.1, rng);
  const auto before = scale_model(g);
  // isolate every node of the last component of size > 1
  std::size_t target = before.partition.count();
  for (std::size_t k = 0; k < before.partition.count(); ++k)
    if (before.partition.sizes[k] > 1) target = k;
  if (target == before.partition.count()) GTEST_SKIP() << "no component to isolate";
  const Graph h = isolate_nodes(g, before.partition.members(target));
  const auto after = scale_model(h);
  for (std::size_t k = 0; k < before.partition.count(); ++k) {
    if (k == target || before.partition.sizes[k] == 1) continue;
    const auto nodes = before.partition.members(k);
    const auto k2 = after.partition.labels[nodes[0]];
    EXPECT_EQ(before.component_constants[k], after.component_constants[k2]);
  }
}

TEST_P(ScalerProperties, RelabelInvariance) {
  std::mt19937_64 rng(800 + GetParam());
  const Graph g = testutil::random_graph(5 + rng() % 30, 0.12, rng);
  std::vector<std::size_t> perm(g.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto a = scale_model(g);
  const auto b = scale_model(testutil::relabel(g, perm));
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double ca = a.component_constants[a.partition.labels[i]];
    const double cb = b.component_constants[b.partition.labels[perm[i]]];
    EXPECT_NEAR(ca, cb, 1e-10 * ca);
    if (std::isfinite(a.marginal_variances[i])) {
      EXPECT_NEAR(a.marginal_variances[i], b.marginal_variances[perm[i]], 1e-10 * a.marginal_variances[i]);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, ScalerProperties, ::testing::Range(0, 25));
