#include "mlkrig/predict.hpp"

#include <Eigen/Cholesky>
#include <sstream>

namespace mlkrig {

namespace {

void check_point(const FittedModel& model, ConstVectorRef x0) {
  if (x0.size() != model.locations.cols()) {
    std::ostringstream os;
    os << "predict: point has dimension " << x0.size() << ", model expects " << model.locations.cols();
    throw ShapeError(os.str());
  }
}

}  // namespace

Prediction predict(const FittedModel& model, ConstVectorRef x0) {
  check_point(model, x0);
  Prediction out;
  out.x0 = x0;
  out.y_hat = model.trend.eval(x0).dot(model.beta) + cross_covariance(model.locations, x0, model.theta).dot(model.gamma);
  return out;
}

Vector predict_batch(const FittedModel& model, ConstMatrixRef points) {
  Vector out(points.rows());
#pragma omp parallel for schedule(dynamic, 8)
  for (Index i = 0; i < points.rows(); ++i) out(i) = predict(model, points.row(i).transpose()).y_hat;
  return out;
}

KrigingVariance::KrigingVariance(const FittedModel& model) : model_(&model) {
  x_ = build_design_matrix(model.trend, model.locations);
  c_factor_.compute(assemble_covariance(model.locations, model.theta));
  if (c_factor_.info() != Eigen::Success) throw NotPositiveDefiniteError("predict_mse: covariance factorization failed");
  c_inv_x_ = c_factor_.solve(x_);
  g_factor_.compute(x_.transpose() * c_inv_x_);
  if (g_factor_.info() != Eigen::Success)
    throw NotPositiveDefiniteError("predict_mse: X^T C^-1 X factorization failed");
}

double KrigingVariance::mse(ConstVectorRef x0) const {
  check_point(*model_, x0);
  const Vector c = cross_covariance(model_->locations, x0, model_->theta);
  const Vector c_inv_c = c_factor_.solve(c);
  const Vector u = x_.transpose() * c_inv_c - model_->trend.eval(x0);
  const double sigma2 = model_->theta.sigma2;
  const double value = sigma2 + u.dot(g_factor_.solve(u)) - c.dot(c_inv_c);
  if (value < 0.0) {
    if (value >= -1e-10 * sigma2) return 0.0;
    std::ostringstream os;
    os << "predict_mse: negative variance " << value << "; covariance is numerically indefinite";
    throw NotPositiveDefiniteError(os.str());
  }
  return value;
}

Vector KrigingVariance::weights(ConstVectorRef x0) const {
  check_point(*model_, x0);
  const Vector c = cross_covariance(model_->locations, x0, model_->theta);
  const Vector c_inv_c = c_factor_.solve(c);
  const Vector u = x_.transpose() * c_inv_c - model_->trend.eval(x0);
  return c_factor_.solve(Vector(c - x_ * g_factor_.solve(u)));
}

std::optional<double> predict_mse(const FittedModel& model, ConstVectorRef x0, Index dense_limit) {
  if (model.locations.rows() > dense_limit) return std::nullopt;
  return KrigingVariance(model).mse(x0);
}

}  // namespace mlkrig
