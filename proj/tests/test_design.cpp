#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "mlkrig/design.hpp"
#include "mlkrig/errors.hpp"
#include "support.hpp"

using namespace mlkrig;

TEST_CASE("trend basis sizes") {
  CHECK(binomial(5, 2) == 10);
  CHECK(TrendBasis(3, 0).size() == 1);
  CHECK(TrendBasis(20, 3).size() == 1771);
  CHECK(TrendBasis(25, 2).size() == 351);
  CHECK(TrendBasis(19, 2).size() == 210);
  for (int d = 1; d <= 6; ++d)
    for (int w = 0; w <= 4; ++w) CHECK(TrendBasis(d, w).size() == binomial(d + w, w));
}

TEST_CASE("monomial order: total degree, then descending lex") {
  const TrendBasis b(2, 2);
  const std::vector<std::vector<int>> expected{{0, 0}, {1, 0}, {0, 1}, {2, 0}, {1, 1}, {0, 2}};
  CHECK(b.exponents() == expected);
  Vector x(2);
  x << 2.0, 3.0;
  Vector v(6);
  v << 1, 2, 3, 4, 6, 9;
  CHECK(b.eval(x) == v);

  const TrendBasis big(4, 3);
  std::set<std::vector<int>> seen;
  int prev_total = 0;
  for (std::size_t m = 0; m < big.exponents().size(); ++m) {
    const auto& e = big.exponents()[m];
    const int total = std::accumulate(e.begin(), e.end(), 0);
    CHECK(total <= 3);
    CHECK(total >= prev_total);
    if (m > 0 && total == prev_total) CHECK(big.exponents()[m - 1] > e);
    prev_total = total;
    CHECK(seen.insert(e).second);
  }
}

TEST_CASE("eval_basis") {
  Vector x(2);
  x << 0.3, -1.7;
  CHECK(eval_basis(TrendBasis(2, 0), x) == Vector::Ones(1));
  Vector lin(3);
  lin << 1.0, 0.3, -1.7;
  CHECK(eval_basis(TrendBasis(2, 1), x) == lin);
  CHECK_THROWS_AS(TrendBasis(3, 1).eval(x), ShapeError);

  const Matrix pts = test::uniform_points(30, 5, 2);
  const TrendBasis t = TrendBasis::fitted(pts, 3);
  for (Index i = 0; i < pts.rows(); ++i) CHECK(t.eval(pts.row(i).transpose())(0) == 1.0);
  // Powers agree with direct evaluation on rescaled coordinates.
  const Vector z = ((pts.row(4).transpose() - t.center()).array() / t.half_width().array()).matrix();
  const Vector k = t.eval(pts.row(4).transpose());
  for (std::size_t m = 0; m < t.exponents().size(); ++m) {
    double ref = 1.0;
    for (int a = 0; a < 5; ++a) ref *= std::pow(z(a), t.exponents()[m][static_cast<std::size_t>(a)]);
    CHECK(k(static_cast<Index>(m)) == doctest::Approx(ref).epsilon(1e-13));
  }
}

TEST_CASE("fitted rescaling maps the training set into [-1, 1]") {
  Matrix pts = test::uniform_points(100, 3, 4);
  pts.col(1) = pts.col(1) * 1e5 + Vector::Constant(100, 3e6);
  pts.col(2).setConstant(7.0);
  const TrendBasis t = TrendBasis::fitted(pts, 1);
  for (Index i = 0; i < 100; ++i) {
    const Vector k = t.eval(pts.row(i).transpose());
    CHECK(k.tail(3).cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
  }
  CHECK(t.half_width()(2) == 1.0);
}

TEST_CASE("design matrix") {
  const Matrix pts = test::uniform_points(40, 2, 5);
  CHECK(build_design_matrix(TrendBasis(2, 0), pts) == Matrix::Ones(40, 1));

  Matrix three(3, 2);
  three << 0.1, 0.7, 0.5, 0.2, 0.9, 0.8;
  const Matrix x3 = build_design_matrix(TrendBasis(2, 1), three);
  CHECK(std::abs(x3.determinant()) > 1e-6);

  Matrix collinear(3, 2);
  collinear << 0, 0, 1, 1, 2, 2;
  try {
    build_design_matrix(TrendBasis(2, 1), collinear);
    FAIL("expected a degenerate-design error");
  } catch (const DegenerateDesignError& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
    CHECK(e.kind() == ErrorKind::data);
  }
  CHECK_THROWS_AS(build_design_matrix(TrendBasis(2, 2), three), InsufficientDataError);

  // Equivariance under point permutations.
  const TrendBasis t = TrendBasis::fitted(pts, 2);
  const Matrix x = build_design_matrix(t, pts);
  std::vector<Index> perm(40);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::reverse(perm.begin(), perm.end());
  std::rotate(perm.begin(), perm.begin() + 7, perm.end());
  Matrix permuted(40, 2);
  for (Index i = 0; i < 40; ++i) permuted.row(i) = pts.row(perm[static_cast<std::size_t>(i)]);
  const Matrix xp = build_design_matrix(t, permuted);
  for (Index i = 0; i < 40; ++i) CHECK(xp.row(i) == x.row(perm[static_cast<std::size_t>(i)]));
}

namespace {

void check_tree(const KdTree& tree, ConstMatrixRef pts) {
  const Index n = pts.rows();
  // Partition property.
  std::vector<Index> all;
  for (int leaf : tree.leaves()) {
    const KdNode& node = tree.node(leaf);
    CHECK(node.size() >= tree.leaf_min());
    if (tree.nodes().size() > 1) CHECK(node.size() < 2 * tree.leaf_min());
    for (Index k = node.begin; k < node.end; ++k) all.push_back(tree.permutation()[static_cast<std::size_t>(k)]);
  }
  std::sort(all.begin(), all.end());
  std::vector<Index> expect(static_cast<std::size_t>(n));
  std::iota(expect.begin(), expect.end(), Index{0});
  CHECK(all == expect);
  // Boxes contain their points; children tile the parent range.
  for (const KdNode& node : tree.nodes()) {
    for (Index k = node.begin; k < node.end; ++k) {
      const Vector p = pts.row(tree.permutation()[static_cast<std::size_t>(k)]).transpose();
      CHECK(((p - node.box_lo).array() >= 0.0).all());
      CHECK(((node.box_hi - p).array() >= 0.0).all());
    }
    if (!node.is_leaf()) {
      CHECK(tree.node(node.left).begin == node.begin);
      CHECK(tree.node(node.left).end == tree.node(node.right).begin);
      CHECK(tree.node(node.right).end == node.end);
    }
  }
  const double bound = std::ceil(std::log2(static_cast<double>(n) / static_cast<double>(tree.leaf_min()))) + 1.0;
  CHECK(tree.levels() <= bound);
}

}  // namespace

TEST_CASE("kd-tree construction") {
  SUBCASE("single leaf") {
    const Matrix pts = test::uniform_points(10, 2, 1);
    const KdTree tree = build_kdtree(pts, 10);
    CHECK(tree.levels() == 1);
    CHECK(tree.leaves().size() == 1);
    check_tree(tree, pts);
  }
  SUBCASE("four balanced leaves") {
    const Matrix pts = test::uniform_points(64, 3, 2);
    const KdTree tree = build_kdtree(pts, 16);
    CHECK(tree.levels() == 3);
    CHECK(tree.leaves().size() == 4);
    for (int leaf : tree.leaves()) CHECK(tree.node(leaf).size() == 16);
    check_tree(tree, pts);
  }
  SUBCASE("random sizes") {
    for (Index n : {33, 100, 257, 1000, 4097}) {
      const Matrix pts = test::uniform_points(n, 4, static_cast<std::uint64_t>(n));
      for (Index lm : {1, 3, 10, 32}) check_tree(build_kdtree(pts, lm), pts);
    }
  }
  SUBCASE("large tree depth") {
    const Matrix pts = test::uniform_points(128000, 2, 3);
    const KdTree tree = build_kdtree(pts, 32);
    CHECK(tree.levels() >= 12);
    CHECK(tree.levels() <= 13);
  }
  SUBCASE("ties and determinism") {
    Matrix pts(40, 2);
    for (Index i = 0; i < 40; ++i) pts.row(i) << static_cast<double>(i % 4), 0.0;
    const KdTree a = build_kdtree(pts, 5);
    const KdTree b = build_kdtree(pts, 5);
    CHECK(a.permutation() == b.permutation());
    check_tree(a, pts);
  }
  SUBCASE("errors") {
    const Matrix pts = test::uniform_points(5, 2, 1);
    CHECK_THROWS_AS(build_kdtree(pts, 6), InsufficientDataError);
    CHECK_THROWS_AS(build_kdtree(pts, 0), ParameterError);
  }
}

TEST_CASE("default leaf size") {
  CHECK(default_leaf_min(1) == 1);
  CHECK(default_leaf_min(210) == 210);
}
