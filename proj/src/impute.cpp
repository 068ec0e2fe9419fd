#include "mlkrig/impute.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mlkrig/random.hpp"

namespace mlkrig {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

Index TabularDataset::column_index(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw SchemaError("unknown column '" + name + "'");
  return static_cast<Index>(it - columns.begin());
}

Index TabularDataset::missing_count(Index col) const {
  Index count = 0;
  for (Index i = 0; i < rows(); ++i) count += missing(i, col) ? 1 : 0;
  return count;
}

TabularDataset parse_csv(std::istream& in, const CsvOptions& options, CsvSummary* summary) {
  TabularDataset data;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("csv: missing header row");
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  data.columns = split_fields(line);
  for (const auto& name : options.required_columns) data.column_index(name);

  std::vector<std::vector<double>> rows;
  Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != data.columns.size()) {
      std::ostringstream os;
      os << "csv line " << line_no << ": expected " << data.columns.size() << " fields, found " << fields.size();
      throw ParseError(os.str());
    }
    std::vector<double> row(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const std::string& f = fields[c];
      if (f.empty() || (options.missing_sentinel && f == *options.missing_sentinel)) {
        row[c] = kNaN;
        continue;
      }
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(value)) {
        std::ostringstream os;
        os << "csv line " << line_no << ", column '" << data.columns[c] << "': malformed number '" << f << "'";
        throw ParseError(os.str());
      }
      row[c] = value;
    }
    rows.push_back(std::move(row));
  }
  data.cells.resize(static_cast<Index>(rows.size()), static_cast<Index>(data.columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < data.columns.size(); ++c) data.cells(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  if (summary) {
    summary->rows = data.rows();
    summary->missing_per_column.clear();
    for (Index c = 0; c < static_cast<Index>(data.columns.size()); ++c) summary->missing_per_column.push_back(data.missing_count(c));
  }
  return data;
}

TabularDataset load_csv(const std::string& path, const CsvOptions& options, CsvSummary* summary) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return parse_csv(in, options, summary);
}

void write_csv(std::ostream& out, const TabularDataset& data, const std::vector<int>* imputed) {
  for (std::size_t c = 0; c < data.columns.size(); ++c) out << (c ? "," : "") << data.columns[c];
  if (imputed) out << ",imputed";
  out << '\n';
  char buffer[64];
  for (Index r = 0; r < data.rows(); ++r) {
    for (Index c = 0; c < data.cells.cols(); ++c) {
      if (c) out << ',';
      if (!data.missing(r, c)) {
        const auto res = std::to_chars(buffer, buffer + sizeof buffer, data.cells(r, c));
        out.write(buffer, res.ptr - buffer);
      }
    }
    if (imputed) out << ',' << (*imputed)[static_cast<std::size_t>(r)];
    out << '\n';
  }
}

Split make_split(Index n_rows, double train_fraction, std::uint64_t seed, Index min_train) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ParameterError("make_split: train fraction must lie strictly between 0 and 1");
  const auto n_train = static_cast<Index>(std::llround(train_fraction * static_cast<double>(n_rows)));
  if (n_train < min_train) {
    std::ostringstream os;
    os << "make_split: " << n_train << " training rows, at least " << min_train << " required";
    throw InsufficientDataError(os.str());
  }
  std::vector<Index> order(static_cast<std::size_t>(n_rows));
  std::iota(order.begin(), order.end(), Index{0});
  CounterRng rng(seed, 1);
  for (Index i = n_rows - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  Split split;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.validation.assign(order.begin() + n_train, order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  return split;
}

double ColumnTransform::forward(double v) const {
  if (log) v = std::log(v);
  if (zscore) v = (v - mean) / sd;
  return v;
}

double ColumnTransform::inverse(double v) const {
  if (zscore) v = v * sd + mean;
  if (log) v = std::exp(v);
  return v;
}

TransformResult transform_pipeline(const TabularDataset& data, const TransformSpec& spec,
                                   const std::vector<Index>& train_rows) {
  TransformResult out;
  std::vector<std::pair<Index, ColumnTransform>> cols;
  for (const auto& [name, t] : spec) cols.emplace_back(data.column_index(name), t);

  std::vector<char> keep(static_cast<std::size_t>(data.rows()), 1);
  for (Index r = 0; r < data.rows(); ++r)
    for (const auto& [c, t] : cols)
      if (t.log && !data.missing(r, c) && !(data.cells(r, c) > 0.0)) keep[static_cast<std::size_t>(r)] = 0;

  for (auto& [c, t] : cols) {
    if (!t.zscore) continue;
    double sum = 0.0;
    double sum_sq = 0.0;
    Index count = 0;
    for (Index r : train_rows) {
      if (!keep[static_cast<std::size_t>(r)] || data.missing(r, c)) continue;
      const double v = t.log ? std::log(data.cells(r, c)) : data.cells(r, c);
      sum += v;
      ++count;
    }
    t.mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
    for (Index r : train_rows) {
      if (!keep[static_cast<std::size_t>(r)] || data.missing(r, c)) continue;
      const double v = (t.log ? std::log(data.cells(r, c)) : data.cells(r, c)) - t.mean;
      sum_sq += v * v;
    }
    const double var = count > 1 ? sum_sq / static_cast<double>(count - 1) : 0.0;
    t.sd = var > 0.0 ? std::sqrt(var) : 1.0;
  }

  for (Index r = 0; r < data.rows(); ++r)
    if (keep[static_cast<std::size_t>(r)]) out.kept_rows.push_back(r);
  out.dropped_rows = data.rows() - static_cast<Index>(out.kept_rows.size());
  out.data.columns = data.columns;
  out.data.cells.resize(static_cast<Index>(out.kept_rows.size()), data.cells.cols());
  for (std::size_t k = 0; k < out.kept_rows.size(); ++k) out.data.cells.row(static_cast<Index>(k)) = data.cells.row(out.kept_rows[k]);
  for (const auto& [c, t] : cols) {
    for (Index r = 0; r < out.data.rows(); ++r)
      if (!out.data.missing(r, c)) out.data.cells(r, c) = t.forward(out.data.cells(r, c));
    out.fitted[data.columns[static_cast<std::size_t>(c)]] = t;
  }
  return out;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["method"] = method;
  j["rmse_rel"] = rmse_rel;
  j["mape"] = mape;
  j["lnq"] = lnq;
  j["lnq_signed"] = lnq_signed;
  j["n_validation"] = n_validation;
  j["excluded_zero_truth"] = excluded_zero_truth;
  j["excluded_nonpositive_ratio"] = excluded_nonpositive_ratio;
  return j.dump();
}

MetricsReport compute_metrics(ConstVectorRef y_true, ConstVectorRef y_pred, const std::string& method) {
  if (y_true.size() != y_pred.size()) throw ShapeError("compute_metrics: vectors differ in length");
  MetricsReport m;
  m.method = method;
  m.n_validation = y_true.size();
  if (y_true.size() == 0) throw EmptyMetricError("compute_metrics: no rows");
  const double mean_sq_truth = y_true.squaredNorm() / static_cast<double>(y_true.size());
  if (!(mean_sq_truth > 0.0)) throw EmptyMetricError("compute_metrics: truth is identically zero");
  m.rmse_rel = std::sqrt((y_pred - y_true).squaredNorm() / static_cast<double>(y_true.size())) / std::sqrt(mean_sq_truth);

  double ape = 0.0;
  Index n_ape = 0;
  double lnq_abs = 0.0;
  double lnq_sgn = 0.0;
  Index n_lnq = 0;
  for (Index i = 0; i < y_true.size(); ++i) {
    const double y = y_true(i);
    const double yh = y_pred(i);
    if (y != 0.0) {
      ape += std::abs(yh - y) / std::abs(y);
      ++n_ape;
    } else {
      ++m.excluded_zero_truth;
    }
    if (yh * y > 0.0) {
      const double l = std::log(yh / y);
      lnq_abs += std::abs(l);
      lnq_sgn += l;
      ++n_lnq;
    } else {
      ++m.excluded_nonpositive_ratio;
    }
  }
  if (n_ape == 0) throw EmptyMetricError("compute_metrics: every truth value is zero; MAPE undefined");
  if (n_lnq == 0) throw EmptyMetricError("compute_metrics: no row has a positive prediction/truth ratio");
  m.mape = ape / static_cast<double>(n_ape);
  m.lnq = lnq_abs / static_cast<double>(n_lnq);
  m.lnq_signed = lnq_sgn / static_cast<double>(n_lnq);
  return m;
}

double wasserstein1(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw EmptyMetricError("wasserstein1: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  // Integrate |F_a - F_b| over the merged breakpoints.
  const double wa = 1.0 / static_cast<double>(a.size());
  const double wb = 1.0 / static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double fa = 0.0, fb = 0.0, total = 0.0;
  double x = std::min(a.front(), b.front());
  while (i < a.size() || j < b.size()) {
    const double next = (j >= b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
    total += std::abs(fa - fb) * (next - x);
    x = next;
    while (i < a.size() && a[i] == x) {
      fa += wa;
      ++i;
    }
    while (j < b.size() && b[j] == x) {
      fb += wb;
      ++j;
    }
  }
  return total;
}

const char* method_name(ImputeMethod method) {
  switch (method) {
    case ImputeMethod::kriging: return "kriging";
    case ImputeMethod::gls: return "gls";
    case ImputeMethod::knn: return "knn";
    case ImputeMethod::knn_regression: return "knn-reg";
  }
  return "?";
}

ImputeMethod parse_method(const std::string& name) {
  if (name == "kriging") return ImputeMethod::kriging;
  if (name == "gls") return ImputeMethod::gls;
  if (name == "knn") return ImputeMethod::knn;
  if (name == "knn-reg") return ImputeMethod::knn_regression;
  throw ParameterError("unknown method '" + name + "' (expected kriging, gls, knn, knn-reg)");
}

ImputationTask make_imputation_task(const TabularDataset& data, const ImputeConfig& config,
                                    const std::optional<Split>& split) {
  if (config.predictors.empty()) throw ParameterError("imputation needs at least one predictor column");
  const Index response_col = data.column_index(config.response);
  std::vector<Index> predictor_cols;
  for (const auto& name : config.predictors) predictor_cols.push_back(data.column_index(name));

  std::vector<Index> bad_rows;
  for (Index r = 0; r < data.rows(); ++r)
    for (Index c : predictor_cols)
      if (data.missing(r, c)) {
        bad_rows.push_back(r);
        break;
      }
  if (!bad_rows.empty()) {
    std::ostringstream os;
    os << "predictor cells missing in " << bad_rows.size() << " row(s):";
    for (std::size_t k = 0; k < std::min<std::size_t>(bad_rows.size(), 20); ++k) os << ' ' << bad_rows[k];
    if (bad_rows.size() > 20) os << " ...";
    throw DegenerateInputError(os.str());
  }

  std::vector<char> is_validation(static_cast<std::size_t>(data.rows()), 0);
  std::vector<Index> train_rows;
  if (split) {
    for (Index r : split->validation) is_validation[static_cast<std::size_t>(r)] = 1;
    for (Index r : split->train)
      if (!data.missing(r, response_col)) train_rows.push_back(r);
  } else {
    for (Index r = 0; r < data.rows(); ++r)
      if (!data.missing(r, response_col)) train_rows.push_back(r);
  }

  TransformSpec spec = config.transforms;
  if (config.zscore_predictors)
    for (const auto& name : config.predictors) spec[name].zscore = true;
  const TransformResult tr = transform_pipeline(data, spec, train_rows);

  ImputationTask task;
  task.transforms = tr.fitted;
  task.dropped_rows = tr.dropped_rows;
  if (auto it = tr.fitted.find(config.response); it != tr.fitted.end()) task.response_transform = it->second;

  std::vector<Index> local_train;
  std::vector<Index> local_target;
  std::vector<char> in_train(static_cast<std::size_t>(data.rows()), 0);
  for (Index r : train_rows) in_train[static_cast<std::size_t>(r)] = 1;
  for (std::size_t k = 0; k < tr.kept_rows.size(); ++k) {
    const Index r = tr.kept_rows[k];
    if (in_train[static_cast<std::size_t>(r)]) {
      local_train.push_back(static_cast<Index>(k));
      task.train_rows.push_back(r);
    } else if (is_validation[static_cast<std::size_t>(r)] || data.missing(r, response_col)) {
      local_target.push_back(static_cast<Index>(k));
      task.target_rows.push_back(r);
    }
  }
  const Index d = static_cast<Index>(predictor_cols.size());
  task.train_x.resize(static_cast<Index>(local_train.size()), d);
  task.train_y.resize(static_cast<Index>(local_train.size()));
  for (std::size_t k = 0; k < local_train.size(); ++k) {
    for (Index c = 0; c < d; ++c) task.train_x(static_cast<Index>(k), c) = tr.data.cells(local_train[k], predictor_cols[static_cast<std::size_t>(c)]);
    task.train_y(static_cast<Index>(k)) = tr.data.cells(local_train[k], response_col);
  }
  task.target_x.resize(static_cast<Index>(local_target.size()), d);
  task.target_truth.resize(static_cast<Index>(local_target.size()));
  for (std::size_t k = 0; k < local_target.size(); ++k) {
    for (Index c = 0; c < d; ++c) task.target_x(static_cast<Index>(k), c) = tr.data.cells(local_target[k], predictor_cols[static_cast<std::size_t>(c)]);
    task.target_truth(static_cast<Index>(k)) = data.cells(task.target_rows[k], response_col);
  }
  return task;
}

KrigingFit fit_kriging(ConstMatrixRef train_x, ConstVectorRef train_y, const ImputeConfig& config) {
  const Index n = train_x.rows();
  if (train_y.size() != n) throw ShapeError("fit_kriging: responses must match training rows");

  // Merge identical locations.
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  auto row_less = [&](Index a, Index b) {
    for (Index c = 0; c < train_x.cols(); ++c) {
      if (train_x(a, c) < train_x(b, c)) return true;
      if (train_x(a, c) > train_x(b, c)) return false;
    }
    return a < b;
  };
  std::sort(order.begin(), order.end(), row_less);
  std::vector<Index> first_of_group;
  std::vector<double> sums;
  std::vector<Index> counts;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Index r = order[k];
    if (k > 0 && train_x.row(r) == train_x.row(order[k - 1])) {
      sums.back() += train_y(r);
      ++counts.back();
    } else {
      first_of_group.push_back(r);
      sums.push_back(train_y(r));
      counts.push_back(1);
    }
  }
  // Restore the original order of first occurrences so results do not depend on sorting.
  std::vector<std::size_t> groups(first_of_group.size());
  std::iota(groups.begin(), groups.end(), std::size_t{0});
  std::sort(groups.begin(), groups.end(), [&](std::size_t a, std::size_t b) { return first_of_group[a] < first_of_group[b]; });
  const auto m = static_cast<Index>(groups.size());
  Matrix x(m, train_x.cols());
  Vector y(m);
  for (Index k = 0; k < m; ++k) {
    const std::size_t g = groups[static_cast<std::size_t>(k)];
    x.row(k) = train_x.row(first_of_group[g]);
    y(k) = sums[g] / static_cast<double>(counts[g]);
  }

  KrigingFit fit;
  fit.merged_duplicates = n - m;
  const TrendBasis trend = TrendBasis::fitted(x, config.degree, config.rescale_trend);
  const Index p = trend.size();
  if (m < p) {
    std::ostringstream os;
    os << "fit_kriging: " << m << " distinct training locations cannot support " << p << " trend columns";
    throw InsufficientDataError(os.str());
  }
  const Index leaf_min = config.leaf_min > 0 ? config.leaf_min : default_leaf_min(p);
  auto make_basis = [&](const Matrix& pts) {
    const Matrix design = build_design_matrix(trend, pts);
    return std::make_shared<const MultilevelBasis>(build_multilevel_basis(design, build_kdtree(pts, leaf_min)));
  };
  auto basis = make_basis(x);

  CovarianceModel theta;
  if (config.fixed_theta) {
    theta = *config.fixed_theta;
  } else {
    if (config.fit_rows > 0 && m > config.fit_rows) {
      std::vector<Index> pick(static_cast<std::size_t>(m));
      std::iota(pick.begin(), pick.end(), Index{0});
      CounterRng rng(config.seed, 7);
      for (Index i = 0; i < config.fit_rows; ++i) {
        const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(m - i)));
        std::swap(pick[static_cast<std::size_t>(i)], pick[static_cast<std::size_t>(j)]);
      }
      pick.resize(static_cast<std::size_t>(config.fit_rows));
      std::sort(pick.begin(), pick.end());
      Matrix sx(config.fit_rows, x.cols());
      Vector sy(config.fit_rows);
      for (Index k = 0; k < config.fit_rows; ++k) {
        sx.row(k) = x.row(pick[static_cast<std::size_t>(k)]);
        sy(k) = y(pick[static_cast<std::size_t>(k)]);
      }
      fit.theta_fit = fit_theta(sx, sy, *make_basis(sx), config.likelihood);
    } else {
      fit.theta_fit = fit_theta(x, y, *basis, config.likelihood);
    }
    theta = fit.theta_fit->model;
  }
  SolverOptions solver = config.solver;
  // Fitted theta can leave C_W far from the identity; allow up to 2 (N - p)
  // iterations unless a cap was requested.
  if (solver.cg.max_iter == 0)
    solver.cg.max_iter = static_cast<int>(std::max<Index>(2 * basis->detail_size(),
                                                          static_cast<Index>(std::ceil(10.0 * std::sqrt(double(m))))));
  auto [model, report] = solve_blup(x, y, trend, std::move(basis), theta, solver);
  fit.model = std::move(model);
  fit.report = std::move(report);
  return fit;
}

namespace {

ImputeResult finish(const ImputationTask& task, ImputeMethod method, const Vector& transformed) {
  ImputeResult out;
  out.method = method;
  out.target_rows = task.target_rows;
  out.imputed.resize(transformed.size());
  for (Index i = 0; i < transformed.size(); ++i) out.imputed(i) = task.response_transform.inverse(transformed(i));
  const bool have_truth = task.target_truth.size() > 0 && task.target_truth.array().isFinite().all();
  if (have_truth) {
    try {
      out.metrics = compute_metrics(task.target_truth, out.imputed, method_name(method));
    } catch (const EmptyMetricError&) {
      // left unset: e.g. no target has a positive prediction/truth ratio
    }
  }
  return out;
}

struct Standardized {
  Matrix train;
  Matrix query;
};

Standardized standardize(ConstMatrixRef train_x, ConstMatrixRef query_x) {
  const Index n = train_x.rows();
  const Vector mean = train_x.colwise().mean();
  Vector sd(train_x.cols());
  for (Index c = 0; c < train_x.cols(); ++c) {
    const double var = n > 1 ? (train_x.col(c).array() - mean(c)).square().sum() / static_cast<double>(n - 1) : 0.0;
    sd(c) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  Standardized s;
  s.train = (train_x.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
  s.query = (query_x.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
  return s;
}

std::vector<Index> nearest(const Matrix& train, ConstVectorRef q, int k) {
  std::vector<std::pair<double, Index>> d(static_cast<std::size_t>(train.rows()));
  for (Index i = 0; i < train.rows(); ++i) d[static_cast<std::size_t>(i)] = {(train.row(i).transpose() - q).squaredNorm(), i};
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  std::vector<Index> out(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(j)] = d[static_cast<std::size_t>(j)].second;
  return out;
}

void check_k(int k, Index n) {
  if (k < 1 || k > n) {
    std::ostringstream os;
    os << "kNN: k = " << k << " must lie in [1, " << n << "]";
    throw ParameterError(os.str());
  }
}

}  // namespace

Vector knn_predict(ConstMatrixRef train_x, ConstVectorRef train_y, ConstMatrixRef query_x, int k) {
  check_k(k, train_x.rows());
  const Standardized s = standardize(train_x, query_x);
  Vector out(query_x.rows());
#pragma omp parallel for schedule(dynamic, 16)
  for (Index q = 0; q < query_x.rows(); ++q) {
    double sum = 0.0;
    for (Index i : nearest(s.train, s.query.row(q).transpose(), k)) sum += train_y(i);
    out(q) = sum / k;
  }
  return out;
}

Vector knn_regression_predict(ConstMatrixRef train_x, ConstVectorRef train_y, ConstMatrixRef query_x, int k) {
  check_k(k, train_x.rows());
  const Standardized s = standardize(train_x, query_x);
  const Index d = train_x.cols();
  Vector out(query_x.rows());
#pragma omp parallel for schedule(dynamic, 16)
  for (Index q = 0; q < query_x.rows(); ++q) {
    const Vector center = s.query.row(q).transpose();
    const auto idx = nearest(s.train, center, k);
    Matrix a(k, d + 1);
    Vector b(k);
    for (int j = 0; j < k; ++j) {
      const Index i = idx[static_cast<std::size_t>(j)];
      a(j, 0) = 1.0;
      // Centered at the query so the intercept is the prediction.
      a.row(j).tail(d) = s.train.row(i) - center.transpose();
      b(j) = train_y(i);
    }
    const Vector coef = a.colPivHouseholderQr().solve(b);
    out(q) = coef(0);
  }
  return out;
}

ImputeResult impute_kriging(const ImputationTask& task, const KrigingFit& fit) {
  return finish(task, ImputeMethod::kriging, predict_batch(fit.model, task.target_x));
}

ImputeResult impute_kriging(const ImputationTask& task, const ImputeConfig& config) {
  return impute_kriging(task, fit_kriging(task.train_x, task.train_y, config));
}

ImputeResult baseline_gls(const ImputationTask& task, const KrigingFit& fit) {
  Vector pred(task.target_x.rows());
  for (Index i = 0; i < pred.size(); ++i) pred(i) = fit.model.trend.eval(task.target_x.row(i).transpose()).dot(fit.model.beta);
  return finish(task, ImputeMethod::gls, pred);
}

ImputeResult baseline_knn(const ImputationTask& task, int k) {
  return finish(task, ImputeMethod::knn, knn_predict(task.train_x, task.train_y, task.target_x, k));
}

ImputeResult baseline_knn_regression(const ImputationTask& task, int k) {
  return finish(task, ImputeMethod::knn_regression, knn_regression_predict(task.train_x, task.train_y, task.target_x, k));
}

TabularDataset fill_dataset(const TabularDataset& data, const std::string& response, const ImputeResult& result,
                            std::vector<int>* imputed_flags) {
  TabularDataset out = data;
  const Index col = out.column_index(response);
  if (imputed_flags) imputed_flags->assign(static_cast<std::size_t>(out.rows()), 0);
  for (std::size_t k = 0; k < result.target_rows.size(); ++k) {
    const Index r = result.target_rows[k];
    out.cells(r, col) = result.imputed(static_cast<Index>(k));
    if (imputed_flags) (*imputed_flags)[static_cast<std::size_t>(r)] = 1;
  }
  return out;
}

TabularDataset generate_synthetic_medical(Index n_rows, std::uint64_t seed, double missing_rate) {
  if (n_rows < 0) throw ParameterError("generate_synthetic_medical: negative row count");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ParameterError("generate_synthetic_medical: missing rate must lie in [0, 1)");
  constexpr int kFeatures = 128;
  // Random Fourier features for a Matérn-3/2 field with unit length scale:
  // frequencies are multivariate Student-t with 3 degrees of freedom.
  CounterRng feature_rng(seed, 100);
  Matrix omega(kFeatures, 4);
  Vector phase(kFeatures);
  for (int m = 0; m < kFeatures; ++m) {
    double chi2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double g = feature_rng.normal();
      chi2 += g * g;
    }
    const double scale = 1.0 / std::sqrt(chi2 / 3.0);
    for (int k = 0; k < 4; ++k) omega(m, k) = feature_rng.normal() * scale;
    phase(m) = 2.0 * std::numbers::pi * feature_rng.uniform();
  }

  TabularDataset data;
  data.columns = {"los", "npr", "ndx", "age", "totchg"};
  data.cells.resize(n_rows, 5);
  for (Index i = 0; i < n_rows; ++i) {
    CounterRng rng(seed, 1000 + static_cast<std::uint64_t>(i));
    const double age = std::clamp(std::round(55.0 + 18.0 * rng.normal()), 0.0, 90.0);
    const double ndx = std::clamp(std::round(std::exp(1.8 + 0.4 * rng.normal() + 0.01 * (age - 55.0))), 1.0, 30.0);
    const double los = std::clamp(1.0 + std::floor(std::exp(0.9 + 0.7 * rng.normal() + 0.03 * ndx)), 1.0, 60.0);
    const double npr = std::clamp(std::floor(std::exp(0.3 + 0.8 * rng.normal() + 0.05 * ndx)) - 1.0, 0.0, 25.0);
    Vector z(4);
    z << (std::log1p(los) - 1.3) / 0.6, (npr - 1.5) / 1.8, (ndx - 7.0) / 4.0, (age - 55.0) / 18.0;
    const double field = std::sqrt(2.0 / kFeatures) * ((omega * z + phase).array().cos().sum());
    const double log_charge =
        8.5 + 0.55 * std::log1p(los) + 0.12 * npr + 0.03 * ndx + 0.004 * age + 0.6 * field + 0.15 * rng.normal();
    const bool missing = rng.uniform() < missing_rate;
    data.cells.row(i) << los, npr, ndx, age, missing ? kNaN : std::exp(log_charge);
  }
  return data;
}

TabularDataset generate_gp_table(Index n_rows, Index n_predictors, std::uint64_t seed, const CovarianceModel& model) {
  if (n_rows < 1 || n_predictors < 1) throw ParameterError("generate_gp_table: need at least one row and predictor");
  CounterRng uniform_rng(seed, 1);
  Matrix x(n_rows, n_predictors);
  for (Index i = 0; i < n_rows; ++i)
    for (Index k = 0; k < n_predictors; ++k) x(i, k) = uniform_rng.uniform();
  Eigen::LLT<Matrix> llt(assemble_covariance(x, model));
  if (llt.info() != Eigen::Success) throw NotPositiveDefiniteError("generate_gp_table: covariance factorization failed");
  CounterRng normal_rng(seed, 2);
  Vector g(n_rows);
  for (Index i = 0; i < n_rows; ++i) g(i) = normal_rng.normal();
  const Vector field = llt.matrixL() * g;

  TabularDataset data;
  for (Index k = 0; k < n_predictors; ++k) data.columns.push_back("x" + std::to_string(k + 1));
  data.columns.push_back("y");
  data.cells.resize(n_rows, n_predictors + 1);
  data.cells.leftCols(n_predictors) = x;
  for (Index i = 0; i < n_rows; ++i) {
    double trend = 1.0;
    for (Index k = 0; k < n_predictors; ++k) trend += ((k % 2 == 0) ? -1.0 : 1.0) * x(i, k) / static_cast<double>(k + 1);
    data.cells(i, n_predictors) = trend + field(i);
  }
  return data;
}

}  // namespace mlkrig
