#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlkrig/likelihood.hpp"
#include "mlkrig/predict.hpp"

namespace mlkrig {

// ---------------------------------------------------------------- tables

/// Numeric table; a missing cell holds NaN.
struct TabularDataset {
  std::vector<std::string> columns;
  Matrix cells;  // rows x columns

  Index rows() const { return cells.rows(); }
  Index column_index(const std::string& name) const;  // throws SchemaError
  bool missing(Index row, Index col) const { return std::isnan(cells(row, col)); }
  Index missing_count(Index col) const;
  Vector column(const std::string& name) const { return cells.col(column_index(name)); }
};

struct CsvOptions {
  std::optional<std::string> missing_sentinel;  // e.g. "-999"; empty fields are always missing
  std::vector<std::string> required_columns;    // schema check against the header
};

struct CsvSummary {
  Index rows = 0;
  std::vector<Index> missing_per_column;
};

TabularDataset parse_csv(std::istream& in, const CsvOptions& options = {}, CsvSummary* summary = nullptr);
TabularDataset load_csv(const std::string& path, const CsvOptions& options = {}, CsvSummary* summary = nullptr);

/// Writes the table; when `imputed` is given an extra 0/1 column "imputed" is appended.
void write_csv(std::ostream& out, const TabularDataset& data, const std::vector<int>* imputed = nullptr);

// ---------------------------------------------------------------- splits

struct Split {
  std::vector<Index> train;
  std::vector<Index> validation;
};

/// Seeded uniform shuffle; round(fraction * n) rows go to training.
/// Throws ParameterError unless 0 < fraction < 1 and InsufficientDataError
/// when fewer than `min_train` rows would be used for training.
Split make_split(Index n_rows, double train_fraction, std::uint64_t seed, Index min_train = 1);

// ---------------------------------------------------------------- transforms

struct ColumnTransform {
  bool log = false;
  bool zscore = false;
  double mean = 0.0;  // fitted on training rows, in the (possibly logged) scale
  double sd = 1.0;

  double forward(double v) const;
  double inverse(double v) const;
};

/// Per-column requested transforms; columns not listed are left unchanged.
using TransformSpec = std::map<std::string, ColumnTransform>;

struct TransformResult {
  TabularDataset data;              // kept rows only, transformed
  std::map<std::string, ColumnTransform> fitted;
  std::vector<Index> kept_rows;     // original row index of each kept row
  Index dropped_rows = 0;           // rows with a nonpositive value under a log transform
};

/// Applies log then z-score. Z-score statistics come from `train_rows`
/// (original indices) only, after dropping rows whose log columns are not
/// strictly positive.
TransformResult transform_pipeline(const TabularDataset& data, const TransformSpec& spec,
                                   const std::vector<Index>& train_rows);

// ---------------------------------------------------------------- metrics

struct MetricsReport {
  std::string method;
  double rmse_rel = 0.0;
  double mape = 0.0;
  double lnq = 0.0;         // mean |ln(y_hat / y)|
  double lnq_signed = 0.0;  // mean ln(y_hat / y), for bias inspection
  Index n_validation = 0;
  Index excluded_zero_truth = 0;     // rows left out of MAPE
  Index excluded_nonpositive_ratio = 0;  // rows left out of lnQ

  std::string to_json() const;
};

/// rmse_rel = sqrt(mean((y_hat - y)^2)) / sqrt(mean(y^2)); mape over rows with
/// y != 0; lnq over rows with y_hat * y > 0. Throws EmptyMetricError when a
/// metric has no contributing rows.
MetricsReport compute_metrics(ConstVectorRef y_true, ConstVectorRef y_pred, const std::string& method = "");

/// Wasserstein-1 distance between two empirical distributions.
double wasserstein1(std::vector<double> a, std::vector<double> b);

// ---------------------------------------------------------------- imputation

enum class ImputeMethod { kriging, gls, knn, knn_regression };
const char* method_name(ImputeMethod method);
ImputeMethod parse_method(const std::string& name);  // throws ParameterError

struct ImputeConfig {
  std::string response;
  std::vector<std::string> predictors;
  int degree = 1;
  bool rescale_trend = true;
  Index leaf_min = 0;  // 0 selects default_leaf_min(p)
  LikelihoodConfig likelihood;
  std::optional<CovarianceModel> fixed_theta;
  /// solver.cg.max_iter = 0 allows 2 (N - p) iterations here.
  /// theta is estimated on a seeded subsample of at most this many training
  /// rows (0 uses them all); the BLUP solve always uses every training row.
  Index fit_rows = 1000;
  SolverOptions solver = [] {
    SolverOptions s;
    s.cg.tol = 1e-6;
    return s;
  }();
  int knn_k = 10;
  std::uint64_t seed = 0;
  /// Transforms applied before fitting; imputed values are reported in
  /// original units. Defaults: z-score every predictor.
  TransformSpec transforms;
  bool zscore_predictors = true;
};

/// Rows to fit on and rows to fill, in the transformed space.
struct ImputationTask {
  std::vector<Index> train_rows;   // original row indices, response observed
  std::vector<Index> target_rows;  // original row indices to impute
  Matrix train_x;
  Vector train_y;
  Matrix target_x;
  /// Ground truth (original units) per target row; NaN where unknown.
  Vector target_truth;
  ColumnTransform response_transform;
  std::map<std::string, ColumnTransform> transforms;
  Index dropped_rows = 0;
};

/// Builds the task. With a split, validation rows are masked and become
/// targets with known truth; rows whose response is missing are always
/// targets. Throws DataError-class exceptions listing rows whose predictors
/// are missing.
ImputationTask make_imputation_task(const TabularDataset& data, const ImputeConfig& config,
                                    const std::optional<Split>& split);

/// Kriging fit over the training rows of a task. Training points that share
/// identical predictor vectors are merged (responses averaged): without a
/// nugget a duplicate location would make C singular.
struct KrigingFit {
  FittedModel model;
  SolveReport report;
  std::optional<ThetaFit> theta_fit;  // absent for fixed theta
  Index merged_duplicates = 0;
};

KrigingFit fit_kriging(ConstMatrixRef train_x, ConstVectorRef train_y, const ImputeConfig& config);

struct ImputeResult {
  ImputeMethod method = ImputeMethod::kriging;
  std::vector<Index> target_rows;
  Vector imputed;  // original units
  std::optional<MetricsReport> metrics;
};

/// Metrics are attached when every target has known truth and every metric
/// has at least one contributing row.
ImputeResult impute_kriging(const ImputationTask& task, const KrigingFit& fit);
ImputeResult impute_kriging(const ImputationTask& task, const ImputeConfig& config);
/// Trend-only prediction k(x0)^T beta with the GLS beta of the fitted theta.
ImputeResult baseline_gls(const ImputationTask& task, const KrigingFit& fit);
ImputeResult baseline_knn(const ImputationTask& task, int k);
ImputeResult baseline_knn_regression(const ImputationTask& task, int k);

/// Numeric kernels of the kNN baselines, in z-scored predictor space
/// (statistics from train_x). Ties in distance go to the lower row index.
Vector knn_predict(ConstMatrixRef train_x, ConstVectorRef train_y, ConstMatrixRef query_x, int k);
Vector knn_regression_predict(ConstMatrixRef train_x, ConstVectorRef train_y, ConstMatrixRef query_x, int k);

/// Fills the response column of the target rows; `imputed_flags` marks them.
TabularDataset fill_dataset(const TabularDataset& data, const std::string& response, const ImputeResult& result,
                            std::vector<int>* imputed_flags);

// ---------------------------------------------------------------- synthetic data

/// Stand-in for an inpatient-records extract: columns los, npr, ndx, age,
/// totchg. Integer-valued covariates with skewed marginals; totchg is
/// lognormal around exp(trend(x) + 0.6 f(x) + 0.15 e), with f a latent
/// Matérn-3/2 random field over the standardized covariates realized by 128
/// random Fourier features, and e independent standard normal noise.
/// totchg is missing independently with probability `missing_rate`.
TabularDataset generate_synthetic_medical(Index n_rows, std::uint64_t seed, double missing_rate = 0.0);

/// Exact Gaussian-process table: `n_predictors` columns x1..xd uniform on
/// [0,1]^d and a response y = 1 + sum_k (-1)^k x_k / k + Z(x), where Z is a
/// zero-mean field with covariance `model`, sampled by dense Cholesky.
TabularDataset generate_gp_table(Index n_rows, Index n_predictors, std::uint64_t seed,
                                 const CovarianceModel& model = {1.5, 0.4, 1.0});

}  // namespace mlkrig
