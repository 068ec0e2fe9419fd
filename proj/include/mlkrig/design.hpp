#pragma once

#include <vector>

#include "mlkrig/kernels.hpp"

namespace mlkrig {

/// Binomial coefficient C(n, k); exact for the sizes used here.
Index binomial(Index n, Index k);

/// Total-degree monomial trend k(x): all x^alpha with |alpha| <= degree.
///
/// Monomials are ordered by total degree, then by descending lexicographic
/// order of the exponent tuple, so for d_loc = 2 and degree 2 the order is
/// 1, x1, x2, x1^2, x1*x2, x2^2. Coordinates are first mapped through an
/// affine rescaling (x - center) / half_width; the identity map is used
/// unless the basis was fitted to a set of locations.
class TrendBasis {
 public:
  TrendBasis() = default;
  TrendBasis(Index d_loc, int degree);

  /// Basis whose rescaling maps each coordinate of `locations` onto [-1, 1].
  /// With rescale = false the raw coordinates are used.
  static TrendBasis fitted(ConstMatrixRef locations, int degree, bool rescale = true);

  Index dimension() const { return d_loc_; }
  int degree() const { return degree_; }
  Index size() const { return static_cast<Index>(exponents_.size()); }
  const std::vector<std::vector<int>>& exponents() const { return exponents_; }

  const Vector& center() const { return center_; }
  const Vector& half_width() const { return half_width_; }
  void set_rescaling(const Vector& center, const Vector& half_width);

  Vector eval(ConstVectorRef x) const;

 private:
  Index d_loc_ = 0;
  int degree_ = 0;
  std::vector<std::vector<int>> exponents_;
  // Monomial m (m > 0) equals monomial parent_[m] times coordinate factor_[m].
  std::vector<Index> parent_;
  std::vector<Index> factor_;
  Vector center_;
  Vector half_width_;
};

Vector eval_basis(const TrendBasis& basis, ConstVectorRef x);

/// X with row i = k(x_i). Throws DegenerateDesignError if X is not of full
/// column rank (checked with a column-pivoted QR).
Matrix build_design_matrix(const TrendBasis& basis, ConstMatrixRef locations);

struct KdNode {
  Index begin = 0;  // range [begin, end) into KdTree::permutation()
  Index end = 0;
  int depth = 0;
  int parent = -1;
  int left = -1;
  int right = -1;
  int axis = -1;
  double split = 0.0;
  Vector box_lo;  // tight bounding box of the node's points
  Vector box_hi;

  bool is_leaf() const { return left < 0; }
  Index size() const { return end - begin; }
};

/// Binary kd-tree with median splits along the widest axis. Every node owns
/// a contiguous range of the permutation, so node supports are segments.
class KdTree {
 public:
  const std::vector<KdNode>& nodes() const { return nodes_; }
  const KdNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const std::vector<Index>& permutation() const { return perm_; }
  std::vector<int> leaves() const;
  int levels() const { return levels_; }
  Index leaf_min() const { return leaf_min_; }
  Index point_count() const { return static_cast<Index>(perm_.size()); }

 private:
  friend KdTree build_kdtree(ConstMatrixRef locations, Index leaf_min);
  std::vector<KdNode> nodes_;
  std::vector<Index> perm_;
  Index leaf_min_ = 0;
  int levels_ = 0;
};

/// Splits any node holding at least 2 * leaf_min points; leaves therefore
/// hold between leaf_min and 2 * leaf_min - 1 points. Median ties are broken
/// by point index.
KdTree build_kdtree(ConstMatrixRef locations, Index leaf_min);

/// The default leaf capacity for a trend with p columns.
Index default_leaf_min(Index p);

}  // namespace mlkrig
