#include "mlkrig/kernels.hpp"

#include <cmath>
#include <sstream>

#include "mlkrig/errors.hpp"

namespace mlkrig {

namespace {

// Beyond this scaled distance the kernel is below double underflow.
constexpr double kUnderflowArgument = 700.0;

double scaled_distance(double r, const CovarianceModel& m) { return std::sqrt(2.0 * m.nu) * r / m.rho; }

void check_distance(double r) {
  if (!std::isfinite(r) || r < 0.0) {
    std::ostringstream os;
    os << "matern: distance must be finite and nonnegative, got " << r;
    throw ParameterError(os.str());
  }
}

inline double distance(const Matrix& pts, Index i, Index j) {
  return (pts.col(i) - pts.col(j)).norm();
}

}  // namespace

void CovarianceModel::validate() const {
  auto ok = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!ok(nu) || !ok(rho) || !ok(sigma2)) {
    std::ostringstream os;
    os << "invalid covariance model (nu=" << nu << ", rho=" << rho << ", sigma2=" << sigma2
       << "); all parameters must be finite and positive";
    throw ParameterError(os.str());
  }
}

namespace detail {

bool is_half_integer(double nu) {
  const double twice = 2.0 * nu;
  const double rounded = std::round(twice);
  return twice == rounded && std::fmod(rounded, 2.0) == 1.0 && nu <= 20.5;
}

double matern_half_integer(double r, const CovarianceModel& model) {
  if (r == 0.0) return model.sigma2;
  const double z = scaled_distance(r, model);
  if (z > kUnderflowArgument) return 0.0;
  const int n = static_cast<int>(model.nu - 0.5);
  // e^{-z} n!/(2n)! sum_i (n+i)!/(i!(n-i)!) (2z)^{n-i}
  double coeff = 1.0;  // (n+i)!/(i!(n-i)!) * n!/(2n)! at i = n is 1
  double sum = 0.0;
  double power = 1.0;  // (2z)^{n-i}, walking i from n down to 0
  for (int i = n; i >= 0; --i) {
    sum += coeff * power;
    power *= 2.0 * z;
    // ratio of coefficients between i-1 and i
    if (i > 0) coeff *= static_cast<double>(i) / (static_cast<double>(n + i) * (n - i + 1));
  }
  return model.sigma2 * sum * std::exp(-z);
}

double matern_bessel(double r, const CovarianceModel& model) {
  if (r == 0.0) return model.sigma2;
  const double z = scaled_distance(r, model);
  if (z > kUnderflowArgument) return 0.0;
  const double nu = model.nu;
  const double log_prefactor = nu * std::log(z) - std::lgamma(nu) - (nu - 1.0) * std::log(2.0);
  const double value = std::exp(log_prefactor) * std::cyl_bessel_k(nu, z);
  return model.sigma2 * std::min(value, 1.0);
}

}  // namespace detail

double matern(double r, const CovarianceModel& model) {
  model.validate();
  check_distance(r);
  if (detail::is_half_integer(model.nu)) return detail::matern_half_integer(r, model);
  return detail::matern_bessel(r, model);
}

Matrix assemble_covariance(ConstMatrixRef locations, const CovarianceModel& model) {
  model.validate();
  const Index n = locations.rows();
  if (n < 1) throw ShapeError("assemble_covariance: need at least one location");
  const Matrix pts = locations.transpose();
  const bool half = detail::is_half_integer(model.nu);
  Matrix c(n, n);
  bool duplicate = false;
  Index dup_i = 0, dup_j = 0;
#pragma omp parallel for schedule(dynamic, 16)
  for (Index j = 0; j < n; ++j) {
    c(j, j) = model.sigma2;
    for (Index i = j + 1; i < n; ++i) {
      const double r = distance(pts, i, j);
      if (r == 0.0) {
#pragma omp critical
        {
          if (!duplicate) {
            duplicate = true;
            dup_i = i;
            dup_j = j;
          }
        }
      }
      const double v = half ? detail::matern_half_integer(r, model) : detail::matern_bessel(r, model);
      c(i, j) = v;
      c(j, i) = v;
    }
  }
  if (duplicate) {
    std::ostringstream os;
    os << "duplicate locations " << dup_j << " and " << dup_i << " make the covariance singular";
    throw DegenerateInputError(os.str());
  }
  return c;
}

Vector cross_covariance(ConstMatrixRef locations, ConstVectorRef x0, const CovarianceModel& model) {
  model.validate();
  if (x0.size() != locations.cols()) throw ShapeError("cross_covariance: point dimension mismatch");
  const bool half = detail::is_half_integer(model.nu);
  Vector c(locations.rows());
  for (Index i = 0; i < locations.rows(); ++i) {
    const double r = (locations.row(i).transpose() - x0).norm();
    c(i) = half ? detail::matern_half_integer(r, model) : detail::matern_bessel(r, model);
  }
  return c;
}

namespace {

void streamed_product(const Matrix& pts, const CovarianceModel& model, ConstVectorRef v, Index block_rows,
                      Vector& out) {
  const Index n = pts.cols();
  const bool half = detail::is_half_integer(model.nu);
  const Index blocks = (n + block_rows - 1) / block_rows;
#pragma omp parallel for schedule(dynamic, 1)
  for (Index b = 0; b < blocks; ++b) {
    const Index begin = b * block_rows;
    const Index end = std::min(n, begin + block_rows);
    for (Index i = begin; i < end; ++i) {
      double acc = 0.0;
      for (Index j = 0; j < n; ++j) {
        const double r = distance(pts, i, j);
        acc += (half ? detail::matern_half_integer(r, model) : detail::matern_bessel(r, model)) * v(j);
      }
      out(i) = acc;
    }
  }
}

}  // namespace

Vector cov_matvec(ConstMatrixRef locations, const CovarianceModel& model, ConstVectorRef v, Index block_rows) {
  model.validate();
  if (v.size() != locations.rows()) throw ShapeError("cov_matvec: vector length must equal N");
  if (block_rows < 1) throw ParameterError("cov_matvec: block_rows must be positive");
  const Matrix pts = locations.transpose();
  Vector out(v.size());
  streamed_product(pts, model, v, block_rows, out);
  return out;
}

CovarianceOperator::CovarianceOperator(ConstMatrixRef locations, const CovarianceModel& model,
                                       std::size_t memory_budget_bytes, Index block_rows)
    : points_(locations.transpose()), model_(model), block_rows_(block_rows) {
  model_.validate();
  if (block_rows_ < 1) throw ParameterError("CovarianceOperator: block_rows must be positive");
  const auto n = static_cast<std::size_t>(points_.cols());
  if (n * n * sizeof(double) <= memory_budget_bytes) dense_ = assemble_covariance(locations, model_);
}

Vector CovarianceOperator::apply(ConstVectorRef v) const {
  if (v.size() != size()) throw ShapeError("CovarianceOperator: vector length must equal N");
  if (is_dense()) {
    // Row-blocked so the summation order is fixed regardless of threads.
    Vector out(v.size());
    const Index n = size();
    const Index blocks = (n + block_rows_ - 1) / block_rows_;
#pragma omp parallel for schedule(static)
    for (Index b = 0; b < blocks; ++b) {
      const Index begin = b * block_rows_;
      const Index rows = std::min(n, begin + block_rows_) - begin;
      // C is symmetric: rows of C are columns, which are contiguous.
      out.segment(begin, rows).noalias() = dense_.middleCols(begin, rows).transpose() * v;
    }
    return out;
  }
  Vector out(v.size());
  streamed_product(points_, model_, v, block_rows_, out);
  return out;
}

double CovarianceOperator::entry(Index i, Index j) const {
  if (is_dense()) return dense_(i, j);
  const double r = distance(points_, i, j);
  return detail::is_half_integer(model_.nu) ? detail::matern_half_integer(r, model_)
                                            : detail::matern_bessel(r, model_);
}

Matrix CovarianceOperator::block(std::span<const Index> rows, std::span<const Index> cols) const {
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  if (is_dense()) {
    for (Index b = 0; b < out.cols(); ++b)
      for (Index a = 0; a < out.rows(); ++a) out(a, b) = dense_(rows[a], cols[b]);
    return out;
  }
#pragma omp parallel for schedule(static)
  for (Index b = 0; b < out.cols(); ++b)
    for (Index a = 0; a < out.rows(); ++a) out(a, b) = entry(rows[a], cols[b]);
  return out;
}

Matrix CovarianceOperator::dense() const {
  if (is_dense()) return dense_;
  return assemble_covariance(points_.transpose(), model_);
}

}  // namespace mlkrig
