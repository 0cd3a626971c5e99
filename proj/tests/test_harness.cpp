#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "covkl/covkl.hpp"
#include "test_util.hpp"

using namespace covkl;
using namespace covkl::harness;
namespace fs = std::filesystem;

namespace {

std::string csv_of(const RunTable& t) {
  std::ostringstream os;
  emit_csv(os, t);
  return os.str();
}

ExperimentConfig tiny(Experiment e) {
  ExperimentConfig c = default_config(e);
  switch (e) {
    case Experiment::fig1_left:
      c.grid = {0.5, 1.0, 1.5};
      c.mc_samples = 5000;
      c.quad_points = 128;
      break;
    case Experiment::fig1_right:
      c.n = 6;
      c.runs = 3;
      c.grid = {3.0, 8.0};
      c.mc_samples = 1000;
      break;
    case Experiment::fig2_left:
    case Experiment::fig2_right:
      c.n = 20;
      c.runs = 3;
      c.grid = {0.5, 5.0};
      c.mc_samples = 1000;
      break;
    case Experiment::custom:
      break;
  }
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, std::string* out = nullptr) {
  const fs::path log = fs::temp_directory_path() / "covkl_cli_stdout.txt";
  const std::string cmd = std::string(COVKL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (out) *out = slurp(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

// --------------------------------------------------------------------- config

TEST(Config, FullScaleDefaults) {
  const auto f1 = default_config(Experiment::fig1_right);
  EXPECT_EQ(f1.n, 30);
  EXPECT_EQ(f1.ratio, 1.8);
  EXPECT_EQ(f1.mc_samples, 10000);
  EXPECT_EQ(f1.runs, 100);
  const auto f2 = default_config(Experiment::fig2_right);
  EXPECT_EQ(f2.n, 1000);
  EXPECT_EQ(f2.runs, 100);
  EXPECT_NO_THROW(f1.validate());
  EXPECT_NO_THROW(f2.validate());
  EXPECT_NO_THROW(default_config(Experiment::fig1_left).validate());
}

TEST(Config, DeskScale) {
  auto c = default_config(Experiment::fig2_left);
  apply_desk_scale(c);
  EXPECT_EQ(c.n, 200);
  EXPECT_EQ(c.runs, 20);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, AssignmentsAndFile) {
  auto c = default_config(Experiment::fig1_right);
  apply_assignment(c, "runs=7");
  apply_assignment(c, " grid = 3, 5 ,9 ");
  apply_assignment(c, "seed=123");
  EXPECT_EQ(c.runs, 7);
  EXPECT_EQ(c.grid, (std::vector<double>{3.0, 5.0, 9.0}));
  EXPECT_EQ(c.master_seed, 123u);
  std::istringstream text("# comment\nconfig_version = 1\nmc_samples = 500\n\nconstraint = unconstrained\n");
  apply_config_text(c, text);
  EXPECT_EQ(c.mc_samples, 500);
  EXPECT_FALSE(c.constrain_trace);
  EXPECT_THROW(apply_assignment(c, "bogus=1"), InvalidArgument);
  EXPECT_THROW(apply_assignment(c, "runs"), InvalidArgument);
  EXPECT_THROW(apply_assignment(c, "runs=1.5"), InvalidArgument);
}

TEST(Config, TextRoundTrip) {
  auto c = default_config(Experiment::fig2_left);
  c.master_seed = 99;
  auto d = default_config(Experiment::fig1_right);
  std::istringstream is(c.to_text());
  apply_config_text(d, is);
  EXPECT_EQ(d.to_text(), c.to_text());
}

TEST(Config, Validation) {
  auto c = default_config(Experiment::fig1_right);
  c.runs = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = default_config(Experiment::fig1_right);
  c.grid = {4.0, 3.0};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.grid = {};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = default_config(Experiment::fig1_right);
  c.n = 1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = default_config(Experiment::fig2_left);
  c.n = 20;
  c.grid = {0.05};
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_THROW(parse_experiment("fig3"), InvalidArgument);
}

// ----------------------------------------------------------------- experiments

TEST(RunExperiment, Fig1RightRowsAndNonNegativeDelta) {
  const auto out = run_experiment(tiny(Experiment::fig1_right));
  EXPECT_TRUE(out.failures.empty());
  int deltas = 0;
  for (const auto& r : out.table)
    if (r.estimator == "delta_kl" && r.run_index >= 0) {
      ++deltas;
      EXPECT_GE(r.kl_mean, 0.0);
    }
  EXPECT_EQ(deltas, 3 * 2);
}

TEST(RunExperiment, Fig2RightCollapsesAtOracle) {
  const auto out = run_experiment(tiny(Experiment::fig2_right));
  EXPECT_TRUE(out.failures.empty());
  std::map<std::tuple<long, double>, std::map<std::string, double>> by_task;
  for (const auto& r : out.table)
    if (r.run_index >= 0) by_task[{r.run_index, r.grid_value}][r.estimator] = r.kl_mean;
  for (const auto& [_, est] : by_task) {
    const double o = est.at("kl_oracle_asym");
    EXPECT_NEAR(est.at("kl_gauss_normalized"), o, 1e-10);
    EXPECT_NEAR(est.at("kl_t_asym_normalized"), o, 1e-10);
    EXPECT_NEAR(est.at("kl_h"), o, 1e-10);
  }
}

TEST(RunExperiment, Fig1LeftLocatesMinima) {
  const auto out = run_experiment(tiny(Experiment::fig1_left));
  EXPECT_TRUE(out.failures.empty());
  std::set<std::string> names;
  for (const auto& r : out.table) names.insert(r.estimator);
  for (const char* e : {"kl_t_mc", "kl_t_quadrature2", "frobenius_sq", "kl_gaussian", "argmin_kl_t_mc",
                        "argmin_frobenius_sq", "oracle_frobenius", "minimize_kl_t"})
    EXPECT_TRUE(names.count(e)) << e;
}

TEST(RunExperiment, OutputKeysAreUnique) {
  for (auto e : {Experiment::fig1_left, Experiment::fig1_right, Experiment::fig2_left, Experiment::fig2_right}) {
    const auto out = run_experiment(tiny(e));
    std::set<std::tuple<std::string, long, double, std::string>> keys;
    for (const auto& r : out.table)
      EXPECT_TRUE(keys.insert({r.experiment, r.run_index, r.grid_value, r.estimator}).second)
          << to_string(e) << " " << r.run_index << " " << r.grid_value << " " << r.estimator;
  }
}

TEST(RunExperiment, DeterministicAcrossInvocationsAndWorkers) {
  for (auto e : {Experiment::fig1_right, Experiment::fig2_left}) {
    const auto cfg = tiny(e);
    const std::string a = csv_of(run_experiment(cfg, 1).table);
    EXPECT_EQ(a, csv_of(run_experiment(cfg, 1).table));
    EXPECT_EQ(a, csv_of(run_experiment(cfg, 4).table));
  }
}

TEST(RunExperiment, DroppingRunsLeavesOthersUnchanged) {
  auto cfg = tiny(Experiment::fig1_right);
  const auto three = run_experiment(cfg).table;
  cfg.runs = 2;
  const auto two = run_experiment(cfg).table;
  std::map<std::tuple<long, double, std::string>, double> ref;
  for (const auto& r : three) ref[{r.run_index, r.grid_value, r.estimator}] = r.kl_mean;
  for (const auto& r : two) {
    if (r.run_index >= 0) {
      EXPECT_EQ(r.kl_mean, (ref.at({r.run_index, r.grid_value, r.estimator})));
    }
  }
}

TEST(RunExperiment, AggregatesMatchRecomputation) {
  const auto out = run_experiment(tiny(Experiment::fig2_left));
  std::map<std::pair<std::string, double>, std::vector<double>> groups;
  for (const auto& r : out.table)
    if (r.run_index >= 0) groups[{r.estimator, r.grid_value}].push_back(r.kl_mean);
  int checked = 0;
  for (const auto& r : out.table) {
    if (r.run_index >= 0) continue;
    const auto& v = groups.at({r.estimator, r.grid_value});
    double mean = 0.0;
    for (double x : v) mean += x / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    EXPECT_NEAR(r.kl_mean, mean, 1e-12 * std::max(1.0, std::abs(mean)));
    EXPECT_NEAR(r.kl_std_error, std::sqrt(ss / static_cast<double>(v.size() - 1)), 1e-12);
    ++checked;
  }
  EXPECT_EQ(checked, 2 * 5);
}

TEST(RunExperiment, PartialFailuresAreRecorded) {
  auto cfg = tiny(Experiment::fig2_left);
  cfg.obs_per_var = 0.5;  // fewer observations than variables
  const auto out = run_experiment(cfg);
  EXPECT_EQ(out.failures.size(), 6u);
  EXPECT_EQ(out.table.front().estimator, "error");
}

TEST(RunExperiment, CustomFromFiles) {
  RngStream rng(5, 0);
  const auto c = test::random_spd(4, rng);
  const auto v = test::random_basis(4, rng);
  const fs::path dir = fs::temp_directory_path() / "covkl_custom";
  fs::create_directories(dir);
  io::write_symmetric_csv((dir / "c.csv").string(), c);
  io::write_basis_csv((dir / "v.csv").string(), v);
  auto cfg = default_config(Experiment::custom);
  cfg.n = 4;
  cfg.c_file = (dir / "c.csv").string();
  cfg.v_file = (dir / "v.csv").string();
  cfg.mc_samples = 2000;
  const auto out = run_experiment(cfg);
  EXPECT_TRUE(out.failures.empty()) << (out.failures.empty() ? "" : out.failures.front());
  for (const auto& r : out.table) {
    if (r.estimator == "delta_kl") {
      EXPECT_GE(r.kl_mean, 0.0);
    }
  }
}

// --------------------------------------------------------------------- report

TEST(Report, CsvHeaderAndPrecision) {
  RunTable t{{"fig1_right", 0, 2.5, "delta_kl", 0.1, 0.01, 12.0, 42}};
  const std::string s = csv_of(t);
  EXPECT_EQ(s, std::string(kCsvHeader) + "\nfig1_right,0,2.5,delta_kl,0.10000000000000001,0.01,0,42\n");
  std::ostringstream timed;
  emit_csv(timed, t, true);
  EXPECT_NE(timed.str().find(",12,42"), std::string::npos);
}

TEST(Report, EmptyTableIsAnError) {
  std::ostringstream os;
  EXPECT_THROW(emit_csv(os, RunTable{}), InvalidArgument);
  EXPECT_THROW(emit_svg(os, RunTable{}), InvalidArgument);
}

TEST(Report, UnwritablePath) {
  RunTable t{{"x", 0, 1.0, "e", 0.0, 0.0, 0.0, 1}};
  EXPECT_THROW(emit_csv(std::string("/nonexistent/dir/out.csv"), t), InvalidArgument);
  EXPECT_THROW(emit_svg(std::string("/nonexistent/dir/out.svg"), t), InvalidArgument);
}

TEST(Report, SinglePointSvg) {
  std::ostringstream os;
  emit_svg(os, RunTable{{"x", 0, 1.0, "kl", 0.5, 0.0, 0.0, 1}}, "one");
  const std::string s = os.str();
  EXPECT_EQ(s.rfind("<svg", 0), 0u);
  EXPECT_NE(s.find("</svg>"), std::string::npos);
  EXPECT_NE(s.find("<circle"), std::string::npos);
  EXPECT_EQ(s.find("nan"), std::string::npos);
}

TEST(Report, Fig2RightSvgHasOneCurvePerEstimator) {
  std::ostringstream os;
  emit_svg(os, run_experiment(tiny(Experiment::fig2_right)).table);
  const std::string s = os.str();
  std::size_t count = 0;
  for (auto pos = s.find("<polyline"); pos != std::string::npos; pos = s.find("<polyline", pos + 1)) ++count;
  EXPECT_EQ(count, 6u);  // mc, gauss, asym, kl_h, largen, oracle
}

// ------------------------------------------------------------------------ CLI

TEST(Cli, RunWritesCsvAndExitsZero) {
  const fs::path out = fs::temp_directory_path() / "covkl_cli_run";
  fs::remove_all(out);
  const std::string args = "run --experiment fig1_right --seed 7 --out " + out.string() +
                           " --plot --set n=5 --set runs=2 --set grid=3,6 --set mc_samples=500";
  ASSERT_EQ(run_cli(args), 0);
  EXPECT_TRUE(fs::exists(out / "fig1_right.csv"));
  EXPECT_TRUE(fs::exists(out / "fig1_right.svg"));
  EXPECT_TRUE(fs::exists(out / "fig1_right_timing.csv"));
  const std::string first = slurp(out / "fig1_right.csv");
  ASSERT_EQ(run_cli(args), 0);
  EXPECT_EQ(first, slurp(out / "fig1_right.csv"));
  EXPECT_EQ(first.substr(0, first.find('\n')), kCsvHeader);
}

TEST(Cli, ConfigErrorsExitTwo) {
  EXPECT_EQ(run_cli("run --experiment nope"), 2);
  EXPECT_EQ(run_cli("run --experiment fig1_right --set runs=0"), 2);
  EXPECT_EQ(run_cli("run --experiment fig1_right --set unknown=1"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("kl --kind gauss --c /nonexistent.csv --xi /nonexistent.csv"), 2);
}

TEST(Cli, KlAndOracle) {
  const fs::path dir = fs::temp_directory_path() / "covkl_cli_kl";
  fs::create_directories(dir);
  Vector d(2);
  d << 2.0, 2.0;
  io::write_symmetric_csv((dir / "i.csv").string(), SymmetricMatrix::identity(2));
  io::write_symmetric_csv((dir / "x.csv").string(), SymmetricMatrix::diagonal(d));
  io::write_basis_csv((dir / "v.csv").string(), OrthonormalBasis::identity(2));
  const std::string pair = " --c " + (dir / "i.csv").string() + " --xi " + (dir / "x.csv").string();
  std::string out;
  ASSERT_EQ(run_cli("kl --kind gauss" + pair, &out), 0);
  EXPECT_NE(out.find("kl_gaussian,0.19314718055994529,0,0"), std::string::npos) << out;
  EXPECT_EQ(run_cli("kl --kind t-quad --nu 4 --grid-points 128" + pair), 0);
  EXPECT_EQ(run_cli("kl --kind t-mc --nu 4 --samples 1000" + pair), 0);
  EXPECT_EQ(run_cli("kl --kind asym --nu 8" + pair), 0);
  EXPECT_EQ(run_cli("kl --kind h --h 0.5" + pair), 0);
  EXPECT_EQ(run_cli("kl --kind h" + pair), 2);
  ASSERT_EQ(run_cli("oracle --c " + (dir / "i.csv").string() + " --v " + (dir / "v.csv").string(), &out), 0);
  EXPECT_NE(out.find("0,1\n1,1\n"), std::string::npos) << out;
}

TEST(Cli, NumericalFailureExitsThree) {
  const fs::path dir = fs::temp_directory_path() / "covkl_cli_bad";
  fs::create_directories(dir);
  std::ofstream((dir / "bad.csv").string()) << "# symmetric n=2\n1,2\n2,1\n";
  const std::string f = (dir / "bad.csv").string();
  EXPECT_EQ(run_cli("kl --kind gauss --c " + f + " --xi " + f), 3);
}
