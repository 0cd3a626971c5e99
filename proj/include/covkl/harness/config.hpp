#pragma once

// Experiment configuration: a flat `key = value` text format with `#`
// comments. Values are layered as experiment defaults, then desk-scale
// overrides, then a config file, then command-line `--set` pairs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "covkl/errors.hpp"
#include "covkl/matrix_io.hpp"

namespace covkl::harness {

inline constexpr int kConfigVersion = 1;

enum class Experiment { fig1_left, fig1_right, fig2_left, fig2_right, custom };

inline std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::fig1_left: return "fig1_left";
    case Experiment::fig1_right: return "fig1_right";
    case Experiment::fig2_left: return "fig2_left";
    case Experiment::fig2_right: return "fig2_right";
    case Experiment::custom: return "custom";
  }
  return "?";
}

inline Experiment parse_experiment(const std::string& s) {
  for (auto e : {Experiment::fig1_left, Experiment::fig1_right, Experiment::fig2_left, Experiment::fig2_right,
                 Experiment::custom})
    if (to_string(e) == s) return e;
  throw InvalidArgument("unknown experiment '" + s + "'");
}

struct ExperimentConfig {
  Experiment experiment = Experiment::fig1_right;
  int config_version = kConfigVersion;
  long n = 30;
  /// Candidate lambda_1 (fig1_left), nu (fig1_right, custom) or h (fig2_*).
  std::vector<double> grid;
  double nu = 4.0;              // fig1_left degrees of freedom
  double ratio = 1.8;           // geometric spectrum ratio
  double rotation_scale = 0.1;  // radians per Givens plane
  std::string basis = "identity";  // population eigenbasis: identity | random
  std::int64_t mc_samples = 10000;
  long runs = 100;
  double obs_per_var = 2.0;     // observations per variable for sample covariances
  std::uint64_t master_seed = 42;
  std::string output_dir = "results";
  double quad_half_width = 100.0;
  long quad_points = 2001;
  long max_iterations = 500;
  double gradient_tolerance = 1e-4;
  bool constrain_trace = true;
  bool control_variate = true;
  bool record_timing = false;
  std::string c_file;  // custom experiment inputs
  std::string v_file;

  void validate() const;
  /// Canonical `key = value` dump; parsing it back reproduces the config.
  std::string to_text() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw InvalidArgument("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline long to_long(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (x != static_cast<double>(static_cast<long>(x))) throw InvalidArgument("config: '" + key + "' expects an integer");
  return static_cast<long>(x);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InvalidArgument("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<double> to_grid(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell = trim(cell);
    if (!cell.empty()) out.push_back(to_double(key, cell));
  }
  return out;
}

}  // namespace detail

/// Full-scale defaults for an experiment.
inline ExperimentConfig default_config(Experiment e) {
  ExperimentConfig c;
  c.experiment = e;
  switch (e) {
    case Experiment::fig1_left:
      c.n = 2;
      c.nu = 4.0;
      c.ratio = 9.0;
      c.rotation_scale = 0.785;
      c.mc_samples = 100000;
      c.runs = 1;
      for (int i = 1; i <= 99; ++i) c.grid.push_back(0.02 * i);
      break;
    case Experiment::fig1_right:
      c.n = 30;
      c.rotation_scale = 0.02;
      c.mc_samples = 10000;
      c.runs = 100;
      c.grid = {2.5, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 32.0};
      break;
    case Experiment::fig2_left:
    case Experiment::fig2_right:
      c.n = 1000;
      c.ratio = 1.02;
      c.mc_samples = 10000;
      c.runs = 100;
      c.grid = {0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0, 1000.0};
      break;
    case Experiment::custom:
      c.runs = 1;
      c.grid = {4.0, 8.0, 16.0};
      break;
  }
  return c;
}

/// Reduced scale for quick runs: n = 200 for the large-n experiments and at
/// most 20 runs.
inline void apply_desk_scale(ExperimentConfig& c) {
  if (c.experiment == Experiment::fig2_left || c.experiment == Experiment::fig2_right) c.n = 200;
  c.runs = std::min<long>(c.runs, 20);
}

inline void set_value(ExperimentConfig& c, const std::string& raw_key, const std::string& raw_value) {
  const std::string key = detail::trim(raw_key);
  const std::string v = detail::trim(raw_value);
  using namespace detail;
  if (key == "config_version") {
    c.config_version = static_cast<int>(to_long(key, v));
    if (c.config_version != kConfigVersion)
      throw InvalidArgument("config: unsupported config_version " + v + " (expected " + std::to_string(kConfigVersion) + ")");
  } else if (key == "experiment") {
    c.experiment = parse_experiment(v);
  } else if (key == "n") {
    c.n = to_long(key, v);
  } else if (key == "grid" || key == "nu_grid" || key == "h_grid" || key == "lambda_grid") {
    c.grid = to_grid(key, v);
  } else if (key == "nu") {
    c.nu = v == "inf" ? std::numeric_limits<double>::infinity() : to_double(key, v);
  } else if (key == "ratio") {
    c.ratio = to_double(key, v);
  } else if (key == "rotation_scale") {
    c.rotation_scale = to_double(key, v);
  } else if (key == "basis") {
    c.basis = v;
  } else if (key == "mc_samples") {
    c.mc_samples = to_long(key, v);
  } else if (key == "runs") {
    c.runs = to_long(key, v);
  } else if (key == "obs_per_var") {
    c.obs_per_var = to_double(key, v);
  } else if (key == "master_seed" || key == "seed") {
    try {
      std::size_t used = 0;
      c.master_seed = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw InvalidArgument("config: 'master_seed' expects an unsigned integer, got '" + v + "'");
    }
  } else if (key == "output_dir") {
    c.output_dir = v;
  } else if (key == "quad_half_width") {
    c.quad_half_width = to_double(key, v);
  } else if (key == "quad_points") {
    c.quad_points = to_long(key, v);
  } else if (key == "max_iterations") {
    c.max_iterations = to_long(key, v);
  } else if (key == "gradient_tolerance") {
    c.gradient_tolerance = to_double(key, v);
  } else if (key == "constraint") {
    if (v == "trace_equals_n") c.constrain_trace = true;
    else if (v == "unconstrained") c.constrain_trace = false;
    else throw InvalidArgument("config: constraint must be trace_equals_n or unconstrained");
  } else if (key == "control_variate") {
    c.control_variate = to_bool(key, v);
  } else if (key == "record_timing") {
    c.record_timing = to_bool(key, v);
  } else if (key == "c_file") {
    c.c_file = v;
  } else if (key == "v_file") {
    c.v_file = v;
  } else {
    throw InvalidArgument("config: unknown key '" + key + "'");
  }
}

/// Applies `key=value` (as given to --set).
inline void apply_assignment(ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InvalidArgument("config: expected key=value, got '" + assignment + "'");
  set_value(c, assignment.substr(0, eq), assignment.substr(eq + 1));
}

inline void apply_config_text(ExperimentConfig& c, std::istream& is) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    try {
      apply_assignment(c, line);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(ExperimentConfig& c, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidArgument("cannot open config file '" + path + "'");
  apply_config_text(c, is);
}

inline void ExperimentConfig::validate() const {
  if (runs < 1) throw InvalidArgument("config: runs must be >= 1");
  if (n < 2) throw InvalidArgument("config: n must be >= 2");
  if (grid.empty()) throw InvalidArgument("config: grid must be non-empty");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw InvalidArgument("config: grid must be strictly increasing");
  if (mc_samples < 2) throw InvalidArgument("config: mc_samples must be >= 2");
  if (!(ratio > 1.0)) throw InvalidArgument("config: ratio must be > 1");
  if (!(rotation_scale >= 0.0)) throw InvalidArgument("config: rotation_scale must be >= 0");
  if (basis != "identity" && basis != "random") throw InvalidArgument("config: basis must be identity or random");
  if (!(obs_per_var > 0.0)) throw InvalidArgument("config: obs_per_var must be > 0");
  switch (experiment) {
    case Experiment::fig1_left:
      if (n != 2) throw InvalidArgument("config: fig1_left requires n = 2");
      if (!(nu > 0.0)) throw InvalidArgument("config: nu must be > 0");
      if (quad_points < 64) throw InvalidArgument("config: quad_points must be >= 64");
      if (!(quad_half_width > 0.0)) throw InvalidArgument("config: quad_half_width must be > 0");
      for (double l : grid)
        if (!(l > 0.0 && l < 2.0)) throw InvalidArgument("config: fig1_left grid values must lie in (0, 2)");
      break;
    case Experiment::fig1_right:
    case Experiment::custom:
      if (mc_samples < 100) throw InvalidArgument("config: optimisation needs mc_samples >= 100");
      for (double v : grid)
        if (!(v > 0.0)) throw InvalidArgument("config: nu grid values must be > 0");
      if (experiment == Experiment::custom && (c_file.empty() || v_file.empty()))
        throw InvalidArgument("config: custom experiment needs c_file and v_file");
      break;
    case Experiment::fig2_left:
    case Experiment::fig2_right:
      for (double h : grid)
        if (!(h * static_cast<double>(n) > 2.0))
          throw InvalidArgument("config: every h must satisfy h * n > 2 (finite covariance)");
      break;
  }
}

inline std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  os << "config_version = " << config_version << "\n";
  os << "experiment = " << to_string(experiment) << "\n";
  os << "n = " << n << "\n";
  os << "grid = ";
  for (std::size_t i = 0; i < grid.size(); ++i) os << (i ? "," : "") << io::format_double(grid[i]);
  os << "\n";
  os << "nu = " << (std::isinf(nu) ? std::string("inf") : io::format_double(nu)) << "\n";
  os << "ratio = " << io::format_double(ratio) << "\n";
  os << "rotation_scale = " << io::format_double(rotation_scale) << "\n";
  os << "basis = " << basis << "\n";
  os << "mc_samples = " << mc_samples << "\n";
  os << "runs = " << runs << "\n";
  os << "obs_per_var = " << io::format_double(obs_per_var) << "\n";
  os << "master_seed = " << master_seed << "\n";
  os << "output_dir = " << output_dir << "\n";
  os << "quad_half_width = " << io::format_double(quad_half_width) << "\n";
  os << "quad_points = " << quad_points << "\n";
  os << "max_iterations = " << max_iterations << "\n";
  os << "gradient_tolerance = " << io::format_double(gradient_tolerance) << "\n";
  os << "constraint = " << (constrain_trace ? "trace_equals_n" : "unconstrained") << "\n";
  os << "control_variate = " << (control_variate ? "true" : "false") << "\n";
  os << "record_timing = " << (record_timing ? "true" : "false") << "\n";
  if (!c_file.empty()) os << "c_file = " << c_file << "\n";
  if (!v_file.empty()) os << "v_file = " << v_file << "\n";
  return os.str();
}

}  // namespace covkl::harness
