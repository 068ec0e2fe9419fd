#pragma once

#include <Eigen/SparseCore>
#include <iosfwd>
#include <vector>

#include "mlkrig/design.hpp"

namespace mlkrig {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// A contiguous band of W rows, all supported on one tree node's points.
struct DetailBlock {
  int node = 0;
  int depth = 0;
  Index row_offset = 0;  // first row of W owned by this block
  Index begin = 0;       // support = tree permutation [begin, end)
  Index end = 0;
  Matrix rows;           // rows x (end - begin), columns in permutation order

  Index row_count() const { return rows.rows(); }
};

/// Orthogonal split of R^N into span(X) (rows of L) and its complement
/// (rows of W), built over a kd-tree. [W; L] is orthogonal and W X = 0.
///
/// Construction: each leaf factors its local block of X with a pivoted
/// Householder QR; the trailing orthonormal directions are orthogonal to
/// the local trend and become rows of W. The leading directions (scaling
/// vectors) and the triangular factor travel to the parent, which stacks the
/// two children's factors, factors again, and turns the trailing directions,
/// expanded through the children's scaling vectors, into rows of W. The
/// root's scaling vectors form L. Local rank below p (for example a leaf
/// whose points share a coordinate value) shrinks the scaling set passed
/// upward instead of failing; only a root rank below p is an error.
class MultilevelBasis {
 public:
  Index size() const { return tree_.point_count(); }
  Index trend_size() const { return l_.rows(); }
  Index detail_size() const { return size() - trend_size(); }
  int levels() const { return tree_.levels(); }
  const KdTree& tree() const { return tree_; }
  const std::vector<DetailBlock>& blocks() const { return blocks_; }
  /// L as a dense p x N matrix in original point order.
  const Matrix& trend_rows() const { return l_; }

  Vector apply_W(ConstVectorRef v) const;
  Vector apply_Wt(ConstVectorRef u) const;
  Vector apply_L(ConstVectorRef v) const;
  Vector apply_Lt(ConstVectorRef u) const;

  /// W M for a dense N x k matrix M.
  Matrix apply_W_cols(const Matrix& m) const;

  Index nnz_W() const;
  Index nnz_L() const { return l_.size(); }

  SparseRowMatrix W_sparse() const;
  SparseRowMatrix L_sparse() const;

  /// Bounding box of the support of the given detail block.
  const KdNode& support_node(const DetailBlock& block) const { return tree_.node(block.node); }

 private:
  friend MultilevelBasis build_multilevel_basis(ConstMatrixRef x, const KdTree& tree);
  KdTree tree_;
  std::vector<DetailBlock> blocks_;
  Matrix l_;
};

/// Throws InsufficientDataError if a leaf holds fewer than p points and
/// DegenerateDesignError if X restricted to the whole tree is rank deficient.
MultilevelBasis build_multilevel_basis(ConstMatrixRef x, const KdTree& tree);

Vector apply_W(const MultilevelBasis& basis, ConstVectorRef v);
Vector apply_Wt(const MultilevelBasis& basis, ConstVectorRef u);
Vector apply_L(const MultilevelBasis& basis, ConstVectorRef v);

/// Dense single-shot orthonormal complement of span(X), (N - p) x N, from a
/// full Householder QR. Used as an independent reference for W.
Matrix dense_orthogonal_complement(ConstMatrixRef x);

/// Binary triplet format, little-endian:
///   uint64 rows, uint64 cols, uint64 nnz, then nnz records of
///   (uint64 row, uint64 col, float64 value) in row-major order.
void write_sparse_triplets(std::ostream& out, const SparseRowMatrix& m);
SparseRowMatrix read_sparse_triplets(std::istream& in);

}  // namespace mlkrig
