// mlkrig: fit, impute, bench, metrics and generate subcommands.
//
// Exit codes: 0 ok, 2 data error, 3 numerical failure, 4 configuration error.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mlkrig/bench.hpp"
#include "mlkrig/impute.hpp"
#include "mlkrig/model_io.hpp"
#include "mlkrig/parallel.hpp"

using namespace mlkrig;

namespace {

constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitConfig = 4;

struct RunConfig {
  std::string input;
  std::string output;
  std::string model_path;
  std::string metrics_path;
  std::string trace_path;
  std::string manifest_path;
  std::string response;
  std::vector<std::string> predictors;
  std::vector<std::string> log_columns;
  std::string missing_sentinel;
  int degree = 1;
  std::optional<double> nu;
  std::optional<double> rho;
  double sigma2 = 1.0;
  bool profile_sigma2 = true;
  double nu_init = 1.0;
  std::optional<double> rho_init;
  double tol = 1e-6;
  int max_iter = 0;
  Index leaf_min = 0;
  double sparse_tau = 3.0;
  Index fit_rows = 1000;
  int max_evals = 200;
  std::optional<double> split;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string method = "kriging";
  int knn_k = 10;
  // bench
  int d = 20;
  std::vector<Index> sizes{1000, 2000, 4000};
  double bench_nu = 1.25;
  double bench_rho = 10.0;
  int bench_degree = 2;
  double bench_tol = 1e-3;
  // generate
  std::string kind = "gp";
  Index rows = 1000;
  Index n_predictors = 4;
  double missing_rate = 0.0;
  // metrics
  std::string truth_column;
  std::string prediction_column;
};

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::data: return kExitData;
    case ErrorKind::numerical: return kExitNumerical;
    case ErrorKind::config: return kExitConfig;
  }
  return 1;
}

// Reads a flat key=value file into "--key=value" arguments. Blank lines and
// lines starting with '#' are skipped; keys are the long flag names.
std::vector<std::string> config_arguments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open config file '" + path + "'");
  std::vector<std::string> args;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      std::ostringstream os;
      os << "config file '" << path << "' line " << line_no << ": expected key=value";
      throw ParameterError(os.str());
    }
    auto strip = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    if (key.empty() || key == "config") {
      std::ostringstream os;
      os << "config file '" << path << "' line " << line_no << ": invalid key";
      throw ParameterError(os.str());
    }
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

void apply_threads(const RunConfig& cfg) {
  int threads = cfg.threads;
  if (threads <= 0) {
    if (const char* env = std::getenv("MLKRIG_THREADS")) {
      try {
        threads = std::stoi(env);
      } catch (const std::exception&) {
        throw ParameterError(std::string("MLKRIG_THREADS is not an integer: '") + env + "'");
      }
      if (threads <= 0) throw ParameterError("MLKRIG_THREADS must be positive");
    }
  }
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  set_thread_count(threads);
}

ImputeConfig impute_config(const RunConfig& cfg) {
  ImputeConfig ic;
  ic.response = cfg.response;
  ic.predictors = cfg.predictors;
  ic.degree = cfg.degree;
  ic.leaf_min = cfg.leaf_min;
  ic.fit_rows = cfg.fit_rows;
  ic.seed = cfg.seed;
  ic.knn_k = cfg.knn_k;
  ic.solver.cg.tol = cfg.tol;
  ic.solver.cg.max_iter = cfg.max_iter;
  ic.likelihood.sparse_threshold = cfg.sparse_tau;
  ic.likelihood.profile_sigma2 = cfg.profile_sigma2;
  ic.likelihood.nu_init = cfg.nu_init;
  ic.likelihood.rho_init = cfg.rho_init;
  ic.likelihood.max_evals = cfg.max_evals;
  ic.likelihood.validate();
  if (cfg.nu.has_value() != cfg.rho.has_value()) throw ParameterError("fixing theta needs both --nu and --rho");
  if (cfg.nu) {
    CovarianceModel m{*cfg.nu, *cfg.rho, cfg.sigma2};
    m.validate();
    ic.fixed_theta = m;
  }
  for (const auto& c : cfg.log_columns) ic.transforms[c].log = true;
  if (cfg.response.empty()) throw ParameterError("--response is required");
  if (cfg.predictors.empty()) throw ParameterError("--predictors is required");
  return ic;
}

TabularDataset load_input(const RunConfig& cfg) {
  if (cfg.input.empty()) throw ParameterError("--input is required");
  CsvOptions options;
  if (!cfg.missing_sentinel.empty()) options.missing_sentinel = cfg.missing_sentinel;
  options.required_columns = cfg.predictors;
  options.required_columns.push_back(cfg.response);
  CsvSummary summary;
  TabularDataset data = load_csv(cfg.input, options, &summary);
  std::cerr << "read " << summary.rows << " rows; missing per column:";
  for (std::size_t c = 0; c < data.columns.size(); ++c)
    std::cerr << ' ' << data.columns[c] << '=' << summary.missing_per_column[c];
  std::cerr << '\n';
  return data;
}

std::optional<Split> make_optional_split(const RunConfig& cfg, Index rows, Index p) {
  if (!cfg.split) return std::nullopt;
  return make_split(rows, *cfg.split, cfg.seed, p);
}

nlohmann::json fit_report_json(const KrigingFit& fit, Index n_train) {
  nlohmann::json j;
  j["theta_mode"] = fit.theta_fit ? "estimated" : "fixed-theta";
  j["nu"] = fit.model.theta.nu;
  j["rho"] = fit.model.theta.rho;
  j["sigma2"] = fit.model.theta.sigma2;
  j["beta"] = std::vector<double>(fit.model.beta.data(), fit.model.beta.data() + fit.model.beta.size());
  j["n_train"] = n_train;
  j["merged_duplicates"] = fit.merged_duplicates;
  if (fit.theta_fit) {
    j["loglik"] = fit.theta_fit->loglik;
    j["likelihood_evaluations"] = fit.theta_fit->trace.size();
  }
  j["solve"] = nlohmann::json::parse(fit.report.to_json());
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  out << text;
}

int cmd_fit(const RunConfig& cfg) {
  apply_threads(cfg);
  const ImputeConfig ic = impute_config(cfg);
  if (cfg.output.empty()) throw ParameterError("fit: --output (model file) is required");
  const TabularDataset data = load_input(cfg);
  const Index p = binomial(static_cast<Index>(cfg.predictors.size()) + cfg.degree, cfg.degree);
  const auto split = make_optional_split(cfg, data.rows(), p);
  const ImputationTask task = make_imputation_task(data, ic, split);
  const KrigingFit fit = fit_kriging(task.train_x, task.train_y, ic);

  SavedModel saved;
  saved.model = fit.model;
  saved.leaf_min = fit.model.basis->tree().leaf_min();
  saved.fixed_theta = !fit.theta_fit.has_value();
  saved.response = cfg.response;
  saved.predictors = cfg.predictors;
  saved.transforms = task.transforms;
  save_model(cfg.output, saved);

  if (!cfg.trace_path.empty() && fit.theta_fit) {
    std::ofstream trace(cfg.trace_path);
    if (!trace) throw ParseError("cannot open '" + cfg.trace_path + "' for writing");
    write_trace_csv(trace, fit.theta_fit->trace);
  }
  write_text(cfg.metrics_path, fit_report_json(fit, task.train_x.rows()).dump(2) + "\n");
  return 0;
}

// Rebuilds the target predictors with the transforms stored in a model file.
void apply_saved_transforms(ImputationTask& task, const TabularDataset& data, const SavedModel& saved) {
  if (saved.predictors.size() != static_cast<std::size_t>(task.target_x.cols()))
    throw SchemaError("model file predictors do not match --predictors");
  for (std::size_t c = 0; c < saved.predictors.size(); ++c) {
    const Index col = data.column_index(saved.predictors[c]);
    const auto it = saved.transforms.find(saved.predictors[c]);
    for (Index k = 0; k < task.target_x.rows(); ++k) {
      const double v = data.cells(task.target_rows[static_cast<std::size_t>(k)], col);
      task.target_x(k, static_cast<Index>(c)) = it == saved.transforms.end() ? v : it->second.forward(v);
    }
  }
  const auto rt = saved.transforms.find(saved.response);
  task.response_transform = rt == saved.transforms.end() ? ColumnTransform{} : rt->second;
}

int cmd_impute(RunConfig cfg) {
  apply_threads(cfg);
  std::optional<SavedModel> saved;
  if (!cfg.model_path.empty()) {
    saved = load_model(cfg.model_path);
    if (cfg.response.empty()) cfg.response = saved->response;
    if (cfg.predictors.empty()) cfg.predictors = saved->predictors;
  }
  const ImputeConfig ic = impute_config(cfg);
  std::vector<ImputeMethod> methods;
  if (cfg.method == "all")
    methods = {ImputeMethod::kriging, ImputeMethod::gls, ImputeMethod::knn, ImputeMethod::knn_regression};
  else
    methods = {parse_method(cfg.method)};

  const TabularDataset data = load_input(cfg);
  const Index p = binomial(static_cast<Index>(cfg.predictors.size()) + cfg.degree, cfg.degree);
  const auto split = make_optional_split(cfg, data.rows(), p);
  ImputationTask task = make_imputation_task(data, ic, split);
  if (task.dropped_rows > 0) std::cerr << "dropped " << task.dropped_rows << " row(s) with nonpositive log-column values\n";
  if (task.target_rows.empty()) {
    std::cerr << "notice: no rows to impute; input copied unchanged\n";
    if (!cfg.output.empty()) {
      std::ofstream out(cfg.output);
      if (!out) throw ParseError("cannot open '" + cfg.output + "' for writing");
      const std::vector<int> flags(static_cast<std::size_t>(data.rows()), 0);
      write_csv(out, data, &flags);
    }
    return 0;
  }

  std::optional<KrigingFit> fit;
  auto need_fit = [&]() -> const KrigingFit& {
    if (!fit) {
      if (saved) {
        KrigingFit k;
        k.model = saved->model;
        fit = std::move(k);
        apply_saved_transforms(task, data, *saved);
      } else {
        fit = fit_kriging(task.train_x, task.train_y, ic);
      }
    }
    return *fit;
  };

  std::vector<ImputeResult> results;
  for (ImputeMethod m : methods) {
    switch (m) {
      case ImputeMethod::kriging: results.push_back(impute_kriging(task, need_fit())); break;
      case ImputeMethod::gls: results.push_back(baseline_gls(task, need_fit())); break;
      case ImputeMethod::knn: results.push_back(baseline_knn(task, std::min<int>(ic.knn_k, static_cast<int>(task.train_x.rows())))); break;
      case ImputeMethod::knn_regression:
        results.push_back(baseline_knn_regression(task, std::min<int>(ic.knn_k, static_cast<int>(task.train_x.rows()))));
        break;
    }
  }

  if (!cfg.output.empty()) {
    std::vector<int> flags;
    const TabularDataset filled = fill_dataset(data, cfg.response, results.front(), &flags);
    std::ofstream out(cfg.output);
    if (!out) throw ParseError("cannot open '" + cfg.output + "' for writing");
    write_csv(out, filled, &flags);
  }

  if (!task.target_truth.array().isFinite().all()) {
    std::cerr << "notice: no ground truth for the imputed rows (use --split to hold out validation rows); metrics omitted\n";
    return 0;
  }
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& r : results) {
    if (r.metrics) {
      reports.push_back(nlohmann::json::parse(r.metrics->to_json()));
    } else {
      std::cerr << "notice: " << method_name(r.method) << ": a metric has no contributing rows; reported as null\n";
      reports.push_back({{"method", method_name(r.method)}, {"rmse_rel", nullptr}, {"mape", nullptr}, {"lnq", nullptr}});
    }
  }
  write_text(cfg.metrics_path, (methods.size() == 1 ? reports[0] : reports).dump(2) + "\n");
  return 0;
}

int cmd_bench(const RunConfig& cfg) {
  apply_threads(cfg);
  SphereBenchSpec spec;
  spec.d = cfg.d;
  spec.sizes = cfg.sizes;
  spec.theta = {cfg.bench_nu, cfg.bench_rho, 1.0};
  spec.degree = cfg.bench_degree;
  spec.tol = cfg.bench_tol;
  spec.seed = cfg.seed;
  spec.validate();
  std::cerr << "# " << kExtrapolationRule << "\n# p = " << spec.trend_size() << ", threads = " << thread_count()
            << '\n';
  std::vector<BenchRow> rows;
  std::ostringstream csv;
  for (const auto& set : generate_sphere_dataset(spec)) {
    rows.push_back(run_bench_row(set, spec));
    std::cerr << "# N = " << rows.back().n << " done in " << rows.back().total_s + rows.back().single_solve_s << " s\n";
  }
  write_bench_csv(csv, rows);
  write_text(cfg.output, csv.str());
  if (!cfg.manifest_path.empty()) {
    std::ofstream m(cfg.manifest_path);
    if (!m) throw ParseError("cannot open '" + cfg.manifest_path + "' for writing");
    write_bench_manifest(m, spec, rows);
  }
  return 0;
}

int cmd_metrics(const RunConfig& cfg) {
  if (cfg.input.empty()) throw ParameterError("--input is required");
  if (cfg.truth_column.empty() || cfg.prediction_column.empty())
    throw ParameterError("metrics: --truth and --prediction columns are required");
  CsvOptions options;
  if (!cfg.missing_sentinel.empty()) options.missing_sentinel = cfg.missing_sentinel;
  options.required_columns = {cfg.truth_column, cfg.prediction_column};
  const TabularDataset data = load_csv(cfg.input, options);
  const Index t = data.column_index(cfg.truth_column);
  const Index q = data.column_index(cfg.prediction_column);
  std::vector<double> yt, yp;
  for (Index r = 0; r < data.rows(); ++r)
    if (!data.missing(r, t) && !data.missing(r, q)) {
      yt.push_back(data.cells(r, t));
      yp.push_back(data.cells(r, q));
    }
  const MetricsReport m = compute_metrics(Eigen::Map<const Vector>(yt.data(), static_cast<Index>(yt.size())),
                                          Eigen::Map<const Vector>(yp.data(), static_cast<Index>(yp.size())),
                                          cfg.method);
  write_text(cfg.metrics_path, nlohmann::json::parse(m.to_json()).dump(2) + "\n");
  return 0;
}

int cmd_generate(const RunConfig& cfg) {
  apply_threads(cfg);
  TabularDataset data;
  if (cfg.kind == "gp") {
    data = generate_gp_table(cfg.rows, cfg.n_predictors, cfg.seed);
    if (cfg.missing_rate > 0.0) throw ParameterError("generate: --missing-rate applies to --kind medical only");
  } else if (cfg.kind == "medical") {
    data = generate_synthetic_medical(cfg.rows, cfg.seed, cfg.missing_rate);
  } else {
    throw ParameterError("generate: --kind must be gp or medical");
  }
  std::ostringstream out;
  write_csv(out, data);
  write_text(cfg.output, out.str());
  return 0;
}

void add_data_options(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--input", cfg.input, "Input CSV");
  sub->add_option("--response", cfg.response, "Response column");
  sub->add_option("--predictors", cfg.predictors, "Predictor columns (comma separated)")->delimiter(',');
  sub->add_option("--log", cfg.log_columns, "Columns to log-transform (comma separated)")->delimiter(',');
  sub->add_option("--missing-sentinel", cfg.missing_sentinel, "Cell text treated as missing");
  sub->add_option("--degree", cfg.degree, "Total degree w of the polynomial trend")->check(CLI::NonNegativeNumber);
  sub->add_option("--nu", cfg.nu, "Fix the Matern smoothness (requires --rho)");
  sub->add_option("--rho", cfg.rho, "Fix the Matern length scale (requires --nu)");
  sub->add_option("--sigma2", cfg.sigma2, "Variance used with a fixed theta");
  sub->add_option("--profile-sigma2", cfg.profile_sigma2, "Profile sigma2 in the likelihood (true/false)");
  sub->add_option("--nu-init", cfg.nu_init, "Starting smoothness for the likelihood search");
  sub->add_option("--rho-init", cfg.rho_init, "Starting length scale (default: median pairwise distance)");
  sub->add_option("--max-evals", cfg.max_evals, "Likelihood evaluations allowed");
  sub->add_option("--fit-rows", cfg.fit_rows, "Rows used for theta estimation (0 = all)");
  sub->add_option("--tol", cfg.tol, "Relative residual tolerance of the PCG solve");
  sub->add_option("--max-iter", cfg.max_iter, "PCG iteration cap (0 = automatic)");
  sub->add_option("--leaf-min", cfg.leaf_min, "kd-tree leaf size parameter (0 = p)");
  sub->add_option("--sparse-tau", cfg.sparse_tau, "Sparsification distance for the likelihood, in units of rho (0 = dense)");
  sub->add_option("--split", cfg.split, "Training fraction; the rest is held out for validation");
  sub->add_option("--seed", cfg.seed, "Random seed");
  sub->add_option("--threads", cfg.threads, "Worker threads (default: MLKRIG_THREADS, else all cores)");
  sub->add_option("--metrics", cfg.metrics_path, "Report JSON path (default: stdout)");
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  CLI::App app{"Multilevel Kriging for regression and missing-data imputation"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  std::string config_path;

  auto* fit = app.add_subcommand("fit", "Estimate theta, solve the BLUP system and write a model file");
  add_data_options(fit, cfg);
  fit->add_option("--output", cfg.output, "Model file to write");
  fit->add_option("--trace", cfg.trace_path, "CSV of likelihood evaluations");
  fit->add_option("--config", config_path, "key=value file; flags override its values");

  auto* impute = app.add_subcommand("impute", "Fill missing response cells");
  add_data_options(impute, cfg);
  impute->add_option("--output", cfg.output, "Imputed CSV to write");
  impute->add_option("--model", cfg.model_path, "Model file from `fit` (otherwise fit in place)");
  impute->add_option("--method", cfg.method, "kriging, gls, knn, knn-reg or all");
  impute->add_option("--k", cfg.knn_k, "Neighbors for knn and knn-reg")->check(CLI::PositiveNumber);
  impute->add_option("--config", config_path, "key=value file; flags override its values");

  auto* bench = app.add_subcommand("bench", "N-sphere conditioning and timing sweep");
  bench->add_option("--d", cfg.d, "Ambient dimension");
  bench->add_option("--sizes", cfg.sizes, "Strictly increasing N values (comma separated)")->delimiter(',');
  bench->add_option("--nu", cfg.bench_nu, "Matern smoothness");
  bench->add_option("--rho", cfg.bench_rho, "Matern length scale");
  bench->add_option("--degree", cfg.bench_degree, "Total degree w");
  bench->add_option("--tol", cfg.bench_tol, "CG tolerance for both solvers");
  bench->add_option("--seed", cfg.seed, "Random seed");
  bench->add_option("--threads", cfg.threads, "Worker threads");
  bench->add_option("--output", cfg.output, "CSV path (default: stdout)");
  bench->add_option("--manifest", cfg.manifest_path, "JSON run manifest path");
  bench->add_option("--config", config_path, "key=value file; flags override its values");

  auto* metrics = app.add_subcommand("metrics", "rMSE, MAPE and lnQ of a prediction column");
  metrics->add_option("--input", cfg.input, "CSV with truth and prediction columns");
  metrics->add_option("--truth", cfg.truth_column, "Truth column");
  metrics->add_option("--prediction", cfg.prediction_column, "Prediction column");
  metrics->add_option("--missing-sentinel", cfg.missing_sentinel, "Cell text treated as missing");
  metrics->add_option("--method", cfg.method, "Label stored in the report");
  metrics->add_option("--metrics", cfg.metrics_path, "Report JSON path (default: stdout)");

  auto* generate = app.add_subcommand("generate", "Write a synthetic table");
  generate->add_option("--kind", cfg.kind, "gp (Gaussian-process table) or medical (los, npr, ndx, age, totchg)");
  generate->add_option("--rows", cfg.rows, "Row count")->check(CLI::PositiveNumber);
  generate->add_option("--predictors", cfg.n_predictors, "Predictor count for --kind gp")->check(CLI::PositiveNumber);
  generate->add_option("--missing-rate", cfg.missing_rate, "Probability that totchg is missing (medical)");
  generate->add_option("--seed", cfg.seed, "Random seed");
  generate->add_option("--threads", cfg.threads, "Worker threads");
  generate->add_option("--output", cfg.output, "CSV path (default: stdout)");

  try {
    // Config file values go first so that command-line flags take precedence.
    std::vector<std::string> args(argv + 1, argv + argc);
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
      else continue;
      const auto extra = config_arguments(path);
      const auto sub = std::find_if(args.begin(), args.end(), [](const std::string& a) {
        return a == "fit" || a == "impute" || a == "bench" || a == "metrics" || a == "generate";
      });
      if (sub == args.end()) throw ParameterError("--config must follow a subcommand");
      args.insert(sub + 1, extra.begin(), extra.end());
      break;
    }
    std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
    try {
      app.parse(args);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return kExitConfig;
    }

    if (*fit) return cmd_fit(cfg);
    if (*impute) return cmd_impute(cfg);
    if (*bench) return cmd_bench(cfg);
    if (*metrics) return cmd_metrics(cfg);
    if (*generate) return cmd_generate(cfg);
    return kExitConfig;
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
