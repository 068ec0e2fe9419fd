#include "mlkrig/design.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

#include "mlkrig/errors.hpp"

namespace mlkrig {

Index binomial(Index n, Index k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  Index result = 1;
  for (Index i = 1; i <= k; ++i) result = result * (n - k + i) / i;
  return result;
}

namespace {

void tuples_with_sum(Index dims, int total, std::vector<int>& prefix, std::vector<std::vector<int>>& out) {
  if (static_cast<Index>(prefix.size()) == dims - 1) {
    prefix.push_back(total);
    out.push_back(prefix);
    prefix.pop_back();
    return;
  }
  for (int first = total; first >= 0; --first) {
    prefix.push_back(first);
    tuples_with_sum(dims, total - first, prefix, out);
    prefix.pop_back();
  }
}

}  // namespace

TrendBasis::TrendBasis(Index d_loc, int degree) : d_loc_(d_loc), degree_(degree) {
  if (d_loc < 1) throw ParameterError("TrendBasis: location dimension must be positive");
  if (degree < 0) throw ParameterError("TrendBasis: degree must be nonnegative");
  std::map<std::vector<int>, Index> position;
  for (int total = 0; total <= degree; ++total) {
    std::vector<int> prefix;
    std::vector<std::vector<int>> level;
    tuples_with_sum(d_loc, total, prefix, level);
    for (auto& alpha : level) {
      position.emplace(alpha, static_cast<Index>(exponents_.size()));
      exponents_.push_back(std::move(alpha));
    }
  }
  parent_.assign(exponents_.size(), -1);
  factor_.assign(exponents_.size(), -1);
  for (std::size_t m = 1; m < exponents_.size(); ++m) {
    auto alpha = exponents_[m];
    Index last = d_loc - 1;
    while (alpha[static_cast<std::size_t>(last)] == 0) --last;
    --alpha[static_cast<std::size_t>(last)];
    parent_[m] = position.at(alpha);
    factor_[m] = last;
  }
  center_ = Vector::Zero(d_loc);
  half_width_ = Vector::Ones(d_loc);
}

TrendBasis TrendBasis::fitted(ConstMatrixRef locations, int degree, bool rescale) {
  TrendBasis basis(locations.cols(), degree);
  if (rescale && locations.rows() > 0) {
    const Vector lo = locations.colwise().minCoeff();
    const Vector hi = locations.colwise().maxCoeff();
    Vector center = 0.5 * (lo + hi);
    Vector half = 0.5 * (hi - lo);
    for (Index k = 0; k < half.size(); ++k)
      if (!(half(k) > 0.0)) half(k) = 1.0;
    basis.set_rescaling(center, half);
  }
  return basis;
}

void TrendBasis::set_rescaling(const Vector& center, const Vector& half_width) {
  if (center.size() != d_loc_ || half_width.size() != d_loc_)
    throw ShapeError("TrendBasis: rescaling vectors must have length d_loc");
  if ((half_width.array() <= 0.0).any()) throw ParameterError("TrendBasis: half widths must be positive");
  center_ = center;
  half_width_ = half_width;
}

Vector TrendBasis::eval(ConstVectorRef x) const {
  if (x.size() != d_loc_) {
    std::ostringstream os;
    os << "eval_basis: point has dimension " << x.size() << ", basis expects " << d_loc_;
    throw ShapeError(os.str());
  }
  const Vector u = (x - center_).cwiseQuotient(half_width_);
  Vector k(size());
  k(0) = 1.0;
  for (Index m = 1; m < size(); ++m) k(m) = k(parent_[static_cast<std::size_t>(m)]) * u(factor_[static_cast<std::size_t>(m)]);
  return k;
}

Vector eval_basis(const TrendBasis& basis, ConstVectorRef x) { return basis.eval(x); }

Matrix build_design_matrix(const TrendBasis& basis, ConstMatrixRef locations) {
  if (locations.cols() != basis.dimension()) throw ShapeError("build_design_matrix: location dimension mismatch");
  const Index n = locations.rows();
  const Index p = basis.size();
  if (n < p) {
    std::ostringstream os;
    os << "build_design_matrix: " << n << " locations cannot support " << p << " trend columns";
    throw InsufficientDataError(os.str());
  }
  Matrix x(n, p);
  for (Index i = 0; i < n; ++i) x.row(i) = basis.eval(locations.row(i).transpose()).transpose();
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  qr.setThreshold(1e-12);
  if (qr.rank() < p) {
    std::ostringstream os;
    os << "design matrix is rank deficient: rank " << qr.rank() << " of " << p << " columns ("
       << (p - qr.rank()) << " deficient)";
    throw DegenerateDesignError(os.str());
  }
  return x;
}

Index default_leaf_min(Index p) { return std::max<Index>(p, 1); }

std::vector<int> KdTree::leaves() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].is_leaf()) out.push_back(static_cast<int>(i));
  return out;
}

KdTree build_kdtree(ConstMatrixRef locations, Index leaf_min) {
  const Index n = locations.rows();
  if (leaf_min < 1) throw ParameterError("build_kdtree: leaf_min must be positive");
  if (n < leaf_min) {
    std::ostringstream os;
    os << "build_kdtree: " << n << " points is fewer than leaf_min = " << leaf_min;
    throw InsufficientDataError(os.str());
  }
  KdTree tree;
  tree.leaf_min_ = leaf_min;
  tree.perm_.resize(static_cast<std::size_t>(n));
  std::iota(tree.perm_.begin(), tree.perm_.end(), Index{0});

  // Depth-first; node ids are assigned on creation, the root is 0.
  std::vector<int> stack;
  KdNode root;
  root.begin = 0;
  root.end = n;
  tree.nodes_.push_back(root);
  stack.push_back(0);
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    KdNode node = tree.nodes_[static_cast<std::size_t>(id)];
    auto first = tree.perm_.begin() + node.begin;
    auto last = tree.perm_.begin() + node.end;

    node.box_lo = Vector::Constant(locations.cols(), std::numeric_limits<double>::infinity());
    node.box_hi = Vector::Constant(locations.cols(), -std::numeric_limits<double>::infinity());
    for (auto it = first; it != last; ++it) {
      node.box_lo = node.box_lo.cwiseMin(locations.row(*it).transpose());
      node.box_hi = node.box_hi.cwiseMax(locations.row(*it).transpose());
    }
    tree.levels_ = std::max(tree.levels_, node.depth + 1);

    if (node.size() >= 2 * leaf_min) {
      Index axis = 0;
      (node.box_hi - node.box_lo).maxCoeff(&axis);
      std::sort(first, last, [&](Index a, Index b) {
        const double xa = locations(a, axis);
        const double xb = locations(b, axis);
        return xa < xb || (xa == xb && a < b);
      });
      const Index mid = node.begin + node.size() / 2;
      node.axis = static_cast<int>(axis);
      node.split = locations(tree.perm_[static_cast<std::size_t>(mid)], axis);

      KdNode left;
      left.begin = node.begin;
      left.end = mid;
      left.depth = node.depth + 1;
      left.parent = id;
      KdNode right = left;
      right.begin = mid;
      right.end = node.end;
      node.left = static_cast<int>(tree.nodes_.size());
      tree.nodes_.push_back(left);
      node.right = static_cast<int>(tree.nodes_.size());
      tree.nodes_.push_back(right);
      stack.push_back(node.right);
      stack.push_back(node.left);
    }
    tree.nodes_[static_cast<std::size_t>(id)] = std::move(node);
  }
  return tree;
}

}  // namespace mlkrig
