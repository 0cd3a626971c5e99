// covkl: command-line front end for the covariance-cleaning KL library.
//
//   covkl run --experiment fig1_right --seed 42 --out results/ [--desk] [--plot] [--set key=value]...
//   covkl kl --kind {gauss|t-mc|t-quad|asym|h} --c C.csv --xi Xi.csv [--nu nu] [--h h]
//   covkl oracle --c C.csv --v V.csv
//
// Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "covkl/covkl.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

int worker_count(std::optional<int> requested) {
  int w = requested.value_or(static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
  if (const char* env = std::getenv("COVKL_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) w = std::min(w, cap);
    } catch (const std::exception&) {
      throw covkl::InvalidArgument(std::string("COVKL_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  return std::max(1, w);
}

void print_row(const std::string& estimator, const covkl::KlEstimate& e) {
  std::cout << estimator << ',' << covkl::io::format_double(e.mean) << ',' << covkl::io::format_double(e.std_error)
            << ',' << e.n_samples << '\n';
}

void print_value(const std::string& estimator, double v) {
  std::cout << estimator << ',' << covkl::io::format_double(v) << ",0,0\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covariance cleaning targets: Frobenius oracle vs Kullback-Leibler information loss"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run an experiment and write <out>/<experiment>.csv");
  std::string experiment;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool desk = false;
  bool plot = false;
  std::vector<std::string> assignments;
  std::string config_file;
  std::optional<int> threads;
  run->add_option("--experiment", experiment, "fig1_left | fig1_right | fig2_left | fig2_right | custom")->required();
  run->add_option("--seed", seed, "Master seed");
  run->add_option("--out", out_dir, "Output directory");
  run->add_flag("--desk", desk, "Reduced scale (n=200 for fig2, at most 20 runs)");
  run->add_flag("--plot", plot, "Also write an SVG plot");
  run->add_option("--set", assignments, "Override a config key (key=value)")->take_all();
  run->add_option("--config", config_file, "Flat key=value config file");
  run->add_option("--threads", threads, "Worker threads (capped by COVKL_THREADS)");

  // kl
  auto* kl = app.add_subcommand("kl", "Evaluate one KL estimator for a (C, Xi) pair");
  kl->set_help_flag("--help", "Print this help message and exit");
  std::string kind, c_path, xi_path;
  std::optional<double> nu, h;
  std::int64_t samples = 100000;
  std::uint64_t kl_seed = 42;
  double half_width = 100.0;
  int grid_points = 2001;
  kl->add_option("--kind", kind, "Estimator kind")
      ->required()
      ->check(CLI::IsMember({"gauss", "t-mc", "t-quad", "asym", "h"}));
  kl->add_option("--c", c_path, "Population matrix CSV")->required();
  kl->add_option("--xi", xi_path, "Estimator matrix CSV")->required();
  kl->add_option("--nu", nu, "Degrees of freedom");
  kl->add_option("--h", h, "Ratio nu/n for --kind h");
  kl->add_option("--samples", samples, "Monte Carlo draws for t-mc");
  kl->add_option("--seed", kl_seed, "Seed for t-mc");
  kl->add_option("--half-width", half_width, "Quadrature box half width");
  kl->add_option("--grid-points", grid_points, "Quadrature nodes per axis");

  // oracle
  auto* oracle = app.add_subcommand("oracle", "Frobenius oracle spectrum diag(V'CV)");
  std::string v_path, spectrum_out;
  oracle->add_option("--c", c_path, "Population matrix CSV")->required();
  oracle->add_option("--v", v_path, "Basis CSV")->required();
  oracle->add_option("--out", spectrum_out, "Write the spectrum to this file as well");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      using namespace covkl::harness;
      ExperimentConfig cfg = default_config(parse_experiment(experiment));
      if (desk) apply_desk_scale(cfg);
      if (!config_file.empty()) apply_config_file(cfg, config_file);
      if (seed) cfg.master_seed = *seed;
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      for (const auto& a : assignments) apply_assignment(cfg, a);
      if (to_string(cfg.experiment) != experiment)
        throw covkl::InvalidArgument("--set experiment=... conflicts with --experiment");
      cfg.validate();

      std::filesystem::create_directories(cfg.output_dir);
      const ExperimentOutput result = run_experiment(cfg, worker_count(threads));
      const std::filesystem::path base = std::filesystem::path(cfg.output_dir) / experiment;
      emit_csv(base.string() + ".csv", result.table, cfg.record_timing);
      emit_timing_csv(base.string() + "_timing.csv", result.table);
      {
        std::ofstream cfg_out(base.string() + ".config");
        cfg_out << cfg.to_text();
      }
      if (plot) emit_svg(base.string() + ".svg", result.table, experiment);
      for (const auto& f : result.failures) std::cerr << "warning: " << f << '\n';
      std::cout << "wrote " << base.string() << ".csv (" << result.table.size() << " rows)\n";
      return 0;
    }

    if (*kl) {
      const covkl::SymmetricMatrix c = covkl::io::read_symmetric_csv(c_path);
      const covkl::SymmetricMatrix xi = covkl::io::read_symmetric_csv(xi_path);
      auto need_nu = [&]() {
        if (!nu) throw covkl::InvalidArgument("--nu is required for --kind " + kind);
        return *nu;
      };
      std::cout << "estimator,kl_mean,kl_std_error,n_samples\n";
      if (kind == "gauss") {
        print_row("kl_gaussian", covkl::kl_gaussian(c, xi));
      } else if (kind == "t-mc") {
        const covkl::RngStream rng(kl_seed, 0);
        print_row("kl_t_mc", covkl::kl_t_mc(c, xi, need_nu(), samples, rng, worker_count(std::nullopt)));
      } else if (kind == "t-quad") {
        print_row("kl_t_quadrature2", covkl::kl_t_quadrature2(c, xi, need_nu(), half_width, grid_points));
      } else if (kind == "asym") {
        const covkl::PairStats s = covkl::pair_stats(c, xi);
        print_value("kl_t_asym_normalized", covkl::kl_t_asym_normalized(s));
        print_value("kl_gauss_normalized", covkl::kl_gauss_normalized(s));
        if (nu) print_value("kl_t_largen", covkl::kl_t_largen_value(s, *nu));
      } else if (kind == "h") {
        if (!h) throw covkl::InvalidArgument("--h is required for --kind h");
        print_value("kl_h", covkl::kl_h(c, xi, *h));
      }
      return 0;
    }

    if (*oracle) {
      const covkl::SymmetricMatrix c = covkl::io::read_symmetric_csv(c_path);
      const covkl::OrthonormalBasis v = covkl::io::read_basis_csv(v_path);
      const covkl::Spectrum lf = covkl::oracle_frobenius(c, v);
      std::ostringstream os;
      os << "k,lambda\n";
      for (Eigen::Index k = 0; k < lf.size(); ++k) os << k << ',' << covkl::io::format_double(lf[k]) << '\n';
      std::cout << os.str();
      std::cout << "# kl_oracle_asym=" << covkl::io::format_double(covkl::kl_oracle_asym(c, v)) << '\n';
      if (!spectrum_out.empty()) {
        std::ofstream f(spectrum_out);
        if (!f) throw covkl::InvalidArgument("cannot write '" + spectrum_out + "'");
        f << os.str();
      }
      return 0;
    }
  } catch (const covkl::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const covkl::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return 0;
}
