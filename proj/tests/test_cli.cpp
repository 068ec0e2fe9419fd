#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "mlkrig/impute.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("mlkrig_cli_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args, const std::string& log) {
  const std::string cmd = std::string(MLKRIG_CLI) + " " + args + " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cli generate, impute and metrics") {
  TempDir dir;
  const std::string log = dir / "log.txt";
  REQUIRE(run("generate --kind gp --rows 300 --predictors 2 --seed 3 --output " + (dir / "gp.csv"), log) == 0);
  const auto table = mlkrig::load_csv(dir / "gp.csv");
  CHECK(table.rows() == 300);

  const std::string common = "--input " + (dir / "gp.csv") + " --response y --predictors x1,x2 --nu 1.5 --rho 1.0 ";
  REQUIRE(run("impute " + common + "--split 0.9 --seed 1 --method all --output " + (dir / "out.csv") +
                  " --metrics " + (dir / "m.json"),
              log) == 0);
  const auto metrics = nlohmann::json::parse(slurp(dir / "m.json"));
  REQUIRE(metrics.is_array());
  CHECK(metrics.size() == 4);
  for (const auto& m : metrics) CHECK(m.contains("rmse_rel"));
  const auto filled = mlkrig::load_csv(dir / "out.csv");
  CHECK(filled.columns.back() == "imputed");
  CHECK(filled.missing_count(filled.column_index("y")) == 0);

  // Two passes over the same inputs produce the same bytes.
  REQUIRE(run("impute " + common + "--split 0.9 --seed 1 --method kriging --output " + (dir / "a.csv"), log) == 0);
  REQUIRE(run("impute " + common + "--split 0.9 --seed 1 --method kriging --threads 1 --output " + (dir / "b.csv"),
              log) == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));

  // Config file values are overridden by flags.
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "# fixed range\nnu = 1.5\nrho = 1.0\nmethod = gls\n";
  }
  REQUIRE(run("impute --config " + (dir / "run.cfg") + " --input " + (dir / "gp.csv") +
                  " --response y --predictors x1,x2 --split 0.9 --method knn --output " + (dir / "c.csv") +
                  " --metrics " + (dir / "c.json"),
              log) == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "c.json"))["method"] == "knn");
}

TEST_CASE("cli fit writes a model that impute can load") {
  TempDir dir;
  const std::string log = dir / "log.txt";
  REQUIRE(run("generate --kind gp --rows 200 --predictors 2 --seed 5 --output " + (dir / "full.csv"), log) == 0);
  {
    auto table = mlkrig::load_csv(dir / "full.csv");
    for (mlkrig::Index i = 0; i < table.rows(); i += 10) table.cells(i, 2) = std::nan("");
    std::ofstream out(dir / "gp.csv");
    mlkrig::write_csv(out, table);
  }
  const std::string common = "--input " + (dir / "gp.csv") + " --response y --predictors x1,x2 ";
  REQUIRE(run("fit " + common + "--nu 1.5 --rho 1.0 --output " + (dir / "model.bin") + " --metrics " +
                  (dir / "fit.json"),
              log) == 0);
  const auto report = nlohmann::json::parse(slurp(dir / "fit.json"));
  CHECK(report["theta_mode"] == "fixed-theta");
  REQUIRE(run("impute " + common + "--model " + (dir / "model.bin") + " --output " + (dir / "out.csv"), log) == 0);
  CHECK(slurp(log).find("no ground truth") != std::string::npos);
  const auto filled = mlkrig::load_csv(dir / "out.csv");
  CHECK(filled.missing_count(filled.column_index("y")) == 0);
}

TEST_CASE("cli exit codes") {
  TempDir dir;
  const std::string log = dir / "log.txt";
  REQUIRE(run("generate --kind gp --rows 50 --predictors 2 --seed 5 --output " + (dir / "gp.csv"), log) == 0);
  {
    std::ofstream bad(dir / "bad.csv");
    bad << "x1,x2,y\n0.1,0.2,1\n0.3,,2\n";
  }
  const std::string common = "--response y --predictors x1,x2 --nu 1.5 --rho 1.0 ";
  CHECK(run("impute --input " + (dir / "bad.csv") + " " + common, log) == 2);
  CHECK(slurp(log).find("row") != std::string::npos);
  CHECK(run("impute --input " + (dir / "missing.csv") + " " + common, log) == 2);
  CHECK(run("impute --input " + (dir / "gp.csv") + " --response y --predictors x1,x2 --nu 1.5", log) == 4);
  CHECK(run("impute --input " + (dir / "gp.csv") + " --response nope --predictors x1,x2", log) == 2);
  CHECK(run("bench --d 4 --sizes 200,100", log) == 4);
  CHECK(run("impute --bogus-flag", log) == 4);
  CHECK(run("impute --input " + (dir / "gp.csv") + " " + common + "--split 1.5", log) == 4);
}

TEST_CASE("cli bench writes csv and manifest") {
  TempDir dir;
  const std::string log = dir / "log.txt";
  REQUIRE(run("bench --d 4 --degree 1 --sizes 100,200 --rho 2 --output " + (dir / "b.csv") + " --manifest " +
                  (dir / "b.json"),
              log) == 0);
  const std::string csv = slurp(dir / "b.csv");
  CHECK(csv.rfind("N,kappa_C,kappa_CW,itr_C,itr_CW,MB_s,Itr_s,Total_s,Eff", 0) == 0);
  const auto manifest = nlohmann::json::parse(slurp(dir / "b.json"));
  CHECK(manifest.contains("seed"));
}
