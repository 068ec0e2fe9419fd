#include "mlkrig/mlbasis.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mlkrig/errors.hpp"

namespace mlkrig {

namespace {

constexpr double kRankThreshold = 1e-12;

// Scaling vectors of a node (columns, permutation order over the node's
// range) and the triangular factor expressing the local trend in them.
struct NodeFactor {
  Matrix scaling;  // n x r
  Matrix coeffs;   // r x p, local X = scaling * coeffs
};

struct LocalSplit {
  Matrix q;  // full orthogonal factor
  Matrix coeffs;
  Index rank = 0;
};

LocalSplit factor(const Matrix& m) {
  Eigen::ColPivHouseholderQR<Matrix> qr(m);
  qr.setThreshold(kRankThreshold);
  LocalSplit out;
  out.rank = qr.rank();
  out.q = qr.householderQ();
  const Matrix r = qr.matrixR().topRows(out.rank).triangularView<Eigen::Upper>();
  out.coeffs = r * qr.colsPermutation().transpose();
  return out;
}

}  // namespace

MultilevelBasis build_multilevel_basis(ConstMatrixRef x, const KdTree& tree) {
  const Index n = x.rows();
  const Index p = x.cols();
  if (n != tree.point_count()) throw ShapeError("build_multilevel_basis: X rows must match tree point count");
  if (p < 1) throw ShapeError("build_multilevel_basis: X needs at least one column");
  for (int leaf : tree.leaves()) {
    if (tree.node(leaf).size() < p) {
      std::ostringstream os;
      os << "build_multilevel_basis: leaf " << leaf << " holds " << tree.node(leaf).size()
         << " points, fewer than p = " << p;
      throw InsufficientDataError(os.str());
    }
  }

  MultilevelBasis basis;
  basis.tree_ = tree;
  const auto& perm = tree.permutation();
  const auto& nodes = tree.nodes();

  std::vector<int> order(nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return nodes[static_cast<std::size_t>(a)].depth > nodes[static_cast<std::size_t>(b)].depth; });

  std::vector<NodeFactor> factors(nodes.size());
  Index row_offset = 0;
  auto emit = [&](int id, Matrix rows) {
    if (rows.rows() == 0) return;
    const KdNode& node = nodes[static_cast<std::size_t>(id)];
    DetailBlock block;
    block.node = id;
    block.depth = node.depth;
    block.row_offset = row_offset;
    block.begin = node.begin;
    block.end = node.end;
    block.rows = std::move(rows);
    row_offset += block.rows.rows();
    basis.blocks_.push_back(std::move(block));
  };

  for (int id : order) {
    const KdNode& node = nodes[static_cast<std::size_t>(id)];
    NodeFactor& f = factors[static_cast<std::size_t>(id)];
    if (node.is_leaf()) {
      Matrix local(node.size(), p);
      for (Index k = 0; k < node.size(); ++k) local.row(k) = x.row(perm[static_cast<std::size_t>(node.begin + k)]);
      LocalSplit s = factor(local);
      f.scaling = s.q.leftCols(s.rank);
      f.coeffs = std::move(s.coeffs);
      emit(id, s.q.rightCols(node.size() - s.rank).transpose());
    } else {
      NodeFactor& a = factors[static_cast<std::size_t>(node.left)];
      NodeFactor& b = factors[static_cast<std::size_t>(node.right)];
      const Index ra = a.coeffs.rows();
      const Index rb = b.coeffs.rows();
      Matrix stacked(ra + rb, p);
      stacked.topRows(ra) = a.coeffs;
      stacked.bottomRows(rb) = b.coeffs;
      LocalSplit s = factor(stacked);
      // Expand the new orthonormal directions through the children's scaling vectors.
      Matrix expanded(node.size(), ra + rb);
      expanded.topRows(a.scaling.rows()).noalias() = a.scaling * s.q.topRows(ra);
      expanded.bottomRows(b.scaling.rows()).noalias() = b.scaling * s.q.bottomRows(rb);
      f.scaling = expanded.leftCols(s.rank);
      f.coeffs = std::move(s.coeffs);
      emit(id, expanded.rightCols(ra + rb - s.rank).transpose());
      a = NodeFactor{};
      b = NodeFactor{};
    }
  }

  const NodeFactor& root = factors[0];
  if (root.coeffs.rows() < p) {
    std::ostringstream os;
    os << "build_multilevel_basis: design restricted to node 0 (root) has rank " << root.coeffs.rows()
       << " < p = " << p;
    throw DegenerateDesignError(os.str());
  }
  basis.l_.resize(p, n);
  for (Index k = 0; k < n; ++k) basis.l_.col(perm[static_cast<std::size_t>(k)]) = root.scaling.row(k).transpose();
  return basis;
}

Vector MultilevelBasis::apply_W(ConstVectorRef v) const {
  if (v.size() != size()) throw ShapeError("apply_W: vector length must equal N");
  const auto& perm = tree_.permutation();
  Vector permuted(size());
  for (Index k = 0; k < size(); ++k) permuted(k) = v(perm[static_cast<std::size_t>(k)]);
  Vector out(detail_size());
  for (const auto& b : blocks_)
    out.segment(b.row_offset, b.row_count()).noalias() = b.rows * permuted.segment(b.begin, b.end - b.begin);
  return out;
}

Matrix MultilevelBasis::apply_W_cols(const Matrix& m) const {
  if (m.rows() != size()) throw ShapeError("apply_W_cols: matrix rows must equal N");
  const auto& perm = tree_.permutation();
  Matrix permuted(size(), m.cols());
  for (Index k = 0; k < size(); ++k) permuted.row(k) = m.row(perm[static_cast<std::size_t>(k)]);
  Matrix out(detail_size(), m.cols());
  for (const auto& b : blocks_)
    out.middleRows(b.row_offset, b.row_count()).noalias() = b.rows * permuted.middleRows(b.begin, b.end - b.begin);
  return out;
}

Vector MultilevelBasis::apply_Wt(ConstVectorRef u) const {
  if (u.size() != detail_size()) throw ShapeError("apply_Wt: vector length must equal N - p");
  Vector permuted = Vector::Zero(size());
  for (const auto& b : blocks_)
    permuted.segment(b.begin, b.end - b.begin).noalias() += b.rows.transpose() * u.segment(b.row_offset, b.row_count());
  const auto& perm = tree_.permutation();
  Vector out(size());
  for (Index k = 0; k < size(); ++k) out(perm[static_cast<std::size_t>(k)]) = permuted(k);
  return out;
}

Vector MultilevelBasis::apply_L(ConstVectorRef v) const {
  if (v.size() != size()) throw ShapeError("apply_L: vector length must equal N");
  return l_ * v;
}

Vector MultilevelBasis::apply_Lt(ConstVectorRef u) const {
  if (u.size() != trend_size()) throw ShapeError("apply_Lt: vector length must equal p");
  return l_.transpose() * u;
}

Index MultilevelBasis::nnz_W() const {
  Index total = 0;
  for (const auto& b : blocks_) total += b.rows.size();
  return total;
}

SparseRowMatrix MultilevelBasis::W_sparse() const {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(nnz_W()));
  const auto& perm = tree_.permutation();
  for (const auto& b : blocks_)
    for (Index i = 0; i < b.row_count(); ++i)
      for (Index k = 0; k < b.rows.cols(); ++k)
        triplets.emplace_back(b.row_offset + i, perm[static_cast<std::size_t>(b.begin + k)], b.rows(i, k));
  SparseRowMatrix w(detail_size(), size());
  w.setFromTriplets(triplets.begin(), triplets.end());
  return w;
}

SparseRowMatrix MultilevelBasis::L_sparse() const { return l_.sparseView(0.0, 0.0); }

Vector apply_W(const MultilevelBasis& basis, ConstVectorRef v) { return basis.apply_W(v); }
Vector apply_Wt(const MultilevelBasis& basis, ConstVectorRef u) { return basis.apply_Wt(u); }
Vector apply_L(const MultilevelBasis& basis, ConstVectorRef v) { return basis.apply_L(v); }

Matrix dense_orthogonal_complement(ConstMatrixRef x) {
  Eigen::HouseholderQR<Matrix> qr(x);
  const Matrix q = qr.householderQ();
  return q.rightCols(x.rows() - x.cols()).transpose();
}

namespace {

static_assert(std::endian::native == std::endian::little, "triplet I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ParseError("sparse triplet stream truncated");
  return value;
}

}  // namespace

void write_sparse_triplets(std::ostream& out, const SparseRowMatrix& m) {
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.nonZeros()));
  for (Index r = 0; r < m.outerSize(); ++r) {
    for (SparseRowMatrix::InnerIterator it(m, r); it; ++it) {
      put<std::uint64_t>(out, static_cast<std::uint64_t>(it.row()));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(it.col()));
      put<double>(out, it.value());
    }
  }
}

SparseRowMatrix read_sparse_triplets(std::istream& in) {
  const auto rows = get<std::uint64_t>(in);
  const auto cols = get<std::uint64_t>(in);
  const auto nnz = get<std::uint64_t>(in);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(nnz);
  for (std::uint64_t k = 0; k < nnz; ++k) {
    const auto r = get<std::uint64_t>(in);
    const auto c = get<std::uint64_t>(in);
    const auto v = get<double>(in);
    if (r >= rows || c >= cols) throw ParseError("sparse triplet index out of range");
    triplets.emplace_back(static_cast<Index>(r), static_cast<Index>(c), v);
  }
  SparseRowMatrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  m.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

}  // namespace mlkrig
