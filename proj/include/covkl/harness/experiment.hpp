#pragma once

// Experiment runner. Work is split into tasks keyed by (run, grid index);
// every task derives its random streams from (master_seed, run) alone, so the
// merged table is independent of the worker count and of which other runs
// exist.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "covkl/divergence.hpp"
#include "covkl/harness/config.hpp"
#include "covkl/linalg.hpp"
#include "covkl/matrix_io.hpp"
#include "covkl/optimize.hpp"
#include "covkl/running_stats.hpp"
#include "covkl/sampling.hpp"

namespace covkl::harness {

struct RunRecord {
  std::string experiment;
  long run_index = 0;  // -1 for aggregate rows
  double grid_value = 0.0;
  std::string estimator;
  double kl_mean = 0.0;
  double kl_std_error = 0.0;
  double wall_time_ms = 0.0;
  std::uint64_t seed = 0;
};

using RunTable = std::vector<RunRecord>;

struct ExperimentOutput {
  RunTable table;
  std::vector<std::string> failures;
};

/// Stream index reserved for quantities shared by every run.
inline constexpr std::uint64_t kSharedStream = 0xffffffffffffULL;

/// Marker rows locate a point (argmin, optimiser output) rather than sample a
/// curve on the grid; they are excluded from aggregation.
inline bool is_marker(const std::string& estimator) {
  return estimator.rfind("argmin_", 0) == 0 || estimator == "oracle_frobenius" || estimator == "minimize_kl_t" ||
         estimator == "error";
}

namespace detail {

struct Task {
  long run = 0;
  long grid_index = -1;  // -1: whole run
  std::function<RunTable()> body;
};

inline OptimizerOptions optimizer_options(const ExperimentConfig& cfg) {
  OptimizerOptions o;
  o.max_iterations = static_cast<int>(cfg.max_iterations);
  o.gradient_tolerance = cfg.gradient_tolerance;
  o.constraint = cfg.constrain_trace ? Constraint::trace_equals_n : Constraint::unconstrained;
  o.mc_samples = cfg.mc_samples;
  o.control_variate = cfg.control_variate;
  return o;
}

inline BasisMode basis_mode(const ExperimentConfig& cfg) {
  return cfg.basis == "random" ? BasisMode::random : BasisMode::identity;
}

inline RunRecord record(const ExperimentConfig& cfg, long run, double grid, const std::string& est, double mean,
                        double se) {
  return {to_string(cfg.experiment), run, grid, est, mean, se, 0.0, cfg.master_seed};
}

inline Spectrum two_point_spectrum(double lambda1) {
  Vector l(2);
  l << lambda1, 2.0 - lambda1;
  return Spectrum(l, 2.0);
}

inline RunTable fig1_left_run(const ExperimentConfig& cfg, const PopulationModel& pop, long run) {
  RunTable rows;
  const RngStream stream(cfg.master_seed, static_cast<std::uint64_t>(run));
  const RngStream mc_stream = stream.substream(0);  // same draws at every grid point
  const int quad = static_cast<int>(cfg.quad_points);

  struct Best {
    double at = 0.0;
    double value = std::numeric_limits<double>::infinity();
  };
  std::map<std::string, Best> best;
  auto track = [&](const std::string& est, double g, double v) {
    auto& b = best[est];
    if (v < b.value) b = {g, v};
  };

  for (double l1 : cfg.grid) {
    const SymmetricMatrix xi = rie_build(pop.rie_basis, two_point_spectrum(l1));
    const KlEstimate mc = kl_t_mc(pop.c, xi, cfg.nu, cfg.mc_samples, mc_stream);
    const KlEstimate qd = kl_t_quadrature2(pop.c, xi, cfg.nu, cfg.quad_half_width, quad);
    const double frob = frobenius_distance_sq(xi, pop.c);
    const double gauss = kl_gaussian(pop.c, xi).mean;
    rows.push_back(record(cfg, run, l1, "kl_t_mc", mc.mean, mc.std_error));
    rows.push_back(record(cfg, run, l1, "kl_t_quadrature2", qd.mean, 0.0));
    rows.push_back(record(cfg, run, l1, "frobenius_sq", frob, 0.0));
    rows.push_back(record(cfg, run, l1, "kl_gaussian", gauss, 0.0));
    track("kl_t_mc", l1, mc.mean);
    track("kl_t_quadrature2", l1, qd.mean);
    track("frobenius_sq", l1, frob);
    track("kl_gaussian", l1, gauss);
  }
  for (const auto& [est, b] : best) rows.push_back(record(cfg, run, b.at, "argmin_" + est, b.value, 0.0));

  const Spectrum lf = oracle_frobenius(pop.c, pop.rie_basis);
  const KlEstimate at_f =
      kl_t_quadrature2(pop.c, rie_build(pop.rie_basis, lf), cfg.nu, cfg.quad_half_width, quad);
  rows.push_back(record(cfg, run, lf[0], "oracle_frobenius", at_f.mean, 0.0));

  RngStream opt_stream = stream.substream(1);
  const OptimResult opt = minimize_kl_t(pop, cfg.nu, optimizer_options(cfg), opt_stream);
  const KlEstimate at_kl =
      kl_t_quadrature2(pop.c, rie_build(pop.rie_basis, opt.spectrum), cfg.nu, cfg.quad_half_width, quad);
  rows.push_back(record(cfg, run, opt.spectrum[0], "minimize_kl_t", at_kl.mean, 0.0));
  return rows;
}

inline RunTable fig1_right_task(const ExperimentConfig& cfg, const PopulationModel& pop, long run, long j) {
  const double nu = cfg.grid[static_cast<std::size_t>(j)];
  RngStream stream = RngStream(cfg.master_seed, static_cast<std::uint64_t>(run)).substream(static_cast<std::uint64_t>(j) + 1);
  const OptimizerOptions opts = optimizer_options(cfg);
  const FrozenKlObjective f = make_frozen_objective(pop, nu, opts, stream);
  const Vector lf = oracle_frobenius(pop.c, pop.rie_basis).values();
  const OptimResult res = minimize_spectrum(f, lf, opts);
  const Vector diff = f.terms(lf) - f.terms(res.spectrum.values());
  RunningStats d;
  for (Eigen::Index i = 0; i < diff.size(); ++i) d.push(diff[i]);
  const KlEstimate at_f = f.estimate(lf);
  RunTable rows;
  rows.push_back(record(cfg, run, nu, "kl_t_mc_frobenius", at_f.mean, at_f.std_error));
  rows.push_back(record(cfg, run, nu, "kl_t_mc_optimal", res.objective.mean, res.objective.std_error));
  rows.push_back(record(cfg, run, nu, "delta_kl", d.mean, d.std_error()));
  return rows;
}

inline RunTable fig2_task(const ExperimentConfig& cfg, const PopulationModel& pop, long run, long j) {
  const double h = cfg.grid[static_cast<std::size_t>(j)];
  const double n = static_cast<double>(cfg.n);
  const double nu = h * n;
  const RngStream base = RngStream(cfg.master_seed, static_cast<std::uint64_t>(run)).substream(static_cast<std::uint64_t>(j) + 1);
  RngStream obs_stream = base.substream(0);
  const RngStream mc_stream = base.substream(1);

  const auto m_obs = static_cast<Eigen::Index>(std::llround(cfg.obs_per_var * n));
  const SampleBlock obs = sample_mvt(pop.c, nu, m_obs, obs_stream);
  const SampleCovariance cov = sample_covariance(obs);
  if (cov.singular_warning) throw NumericalError("sample covariance is singular (increase obs_per_var)");

  RunTable rows;
  auto emit_all = [&](const SymmetricMatrix& xi, const PairStats& s) {
    const KlEstimate mc = kl_t_mc(pop.c, xi, nu, cfg.mc_samples, mc_stream);
    rows.push_back(record(cfg, run, h, "kl_t_mc_normalized", mc.mean / n, mc.std_error / n));
    rows.push_back(record(cfg, run, h, "kl_gauss_normalized", kl_gauss_normalized(s), 0.0));
    rows.push_back(record(cfg, run, h, "kl_t_asym_normalized", kl_t_asym_normalized(s), 0.0));
    rows.push_back(record(cfg, run, h, "kl_h", kl_h(s, h), 0.0));
    rows.push_back(record(cfg, run, h, "kl_t_largen_normalized", kl_t_largen_value(s, nu) / n, 0.0));
  };

  if (cfg.experiment == Experiment::fig2_left) {
    // Moment estimate of the scale matrix: the covariance of t draws is nu/(nu-2) times the scale.
    const SymmetricMatrix xi = SymmetricMatrix::from_lower(cov.matrix.dense() * ((nu - 2.0) / nu));
    emit_all(xi, pair_stats(pop.c, xi));
  } else {
    const OrthonormalBasis v = eigendecompose(cov.matrix).basis;
    const Spectrum lf = oracle_frobenius(pop.c, v);
    const SymmetricMatrix xi = rie_build(v, lf);
    emit_all(xi, pair_stats(pop.c, v, lf));
    rows.push_back(record(cfg, run, h, "kl_oracle_asym", kl_oracle_asym(pop.c, v), 0.0));
  }
  return rows;
}

inline RunTable custom_task(const ExperimentConfig& cfg, const SymmetricMatrix& c, const OrthonormalBasis& v, long run,
                            long j) {
  const double nu = cfg.grid[static_cast<std::size_t>(j)];
  const RngStream base = RngStream(cfg.master_seed, static_cast<std::uint64_t>(run)).substream(static_cast<std::uint64_t>(j) + 1);
  const Spectrum lf = oracle_frobenius(c, v);
  const SymmetricMatrix xi = rie_build(v, lf);
  const PairStats s = pair_stats(c, v, lf);
  RunTable rows;
  rows.push_back(record(cfg, run, nu, "kl_gaussian", kl_gaussian_value(s), 0.0));
  const KlEstimate mc = kl_t_mc(c, xi, nu, cfg.mc_samples, base.substream(0));
  rows.push_back(record(cfg, run, nu, "kl_t_mc", mc.mean, mc.std_error));
  if (nu > 2.0) rows.push_back(record(cfg, run, nu, "kl_t_largen", kl_t_largen_value(s, nu), 0.0));

  const Eigen::Index n = c.dim();
  const OptimizerOptions opts = optimizer_options(cfg);
  const Eigendecomposition ec = eigendecompose(c);
  const PopulationModel pop{c, ec.spectrum(), ec.basis, v};
  RngStream opt_stream = base.substream(1);
  const FrozenKlObjective f = make_frozen_objective(pop, nu, opts, opt_stream);
  Vector start = lf.values();
  if (cfg.constrain_trace) start *= static_cast<double>(n) / start.sum();
  const OptimResult res = minimize_spectrum(f, start, opts);
  const Vector diff = f.terms(start) - f.terms(res.spectrum.values());
  RunningStats d;
  for (Eigen::Index i = 0; i < diff.size(); ++i) d.push(diff[i]);
  rows.push_back(record(cfg, run, nu, "delta_kl", d.mean, d.std_error()));
  return rows;
}

inline void run_tasks(std::vector<Task>& tasks, std::vector<RunTable>& results, std::vector<std::string>& errors,
                      int workers) {
  results.assign(tasks.size(), {});
  errors.assign(tasks.size(), {});
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        results[i] = tasks[i].body();
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      for (auto& r : results[i]) r.wall_time_ms = ms;
    }
  };
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(tasks.size())));
  if (w == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < w; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
}

}  // namespace detail

/// Mean and sample standard deviation over runs for every (grid value,
/// estimator) curve point, as rows with run_index = -1.
inline RunTable aggregate(const RunTable& rows) {
  struct Acc {
    std::vector<double> values;
    double wall = 0.0;
    RunRecord proto;
  };
  std::vector<std::pair<std::string, double>> order;
  std::map<std::pair<std::string, double>, Acc> acc;
  for (const auto& r : rows) {
    if (r.run_index < 0 || is_marker(r.estimator) || !std::isfinite(r.kl_mean)) continue;
    const auto key = std::make_pair(r.estimator, r.grid_value);
    auto it = acc.find(key);
    if (it == acc.end()) {
      order.push_back(key);
      it = acc.emplace(key, Acc{{}, 0.0, r}).first;
    }
    it->second.values.push_back(r.kl_mean);
    it->second.wall += r.wall_time_ms;
  }
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  RunTable out;
  for (const auto& key : order) {
    const Acc& a = acc.at(key);
    const double count = static_cast<double>(a.values.size());
    double sum = 0.0;
    for (double v : a.values) sum += v;
    const double mean = sum / count;
    double ss = 0.0;
    for (double v : a.values) ss += (v - mean) * (v - mean);
    const double sd = a.values.size() > 1 ? std::sqrt(ss / (count - 1.0)) : 0.0;
    RunRecord r = a.proto;
    r.run_index = -1;
    r.kl_mean = mean;
    r.kl_std_error = sd;
    r.wall_time_ms = a.wall / count;
    out.push_back(r);
  }
  return out;
}

inline ExperimentOutput run_experiment(const ExperimentConfig& cfg, int workers = 1) {
  cfg.validate();
  std::vector<detail::Task> tasks;
  const auto n = static_cast<Eigen::Index>(cfg.n);
  const auto grid_size = static_cast<long>(cfg.grid.size());

  switch (cfg.experiment) {
    case Experiment::fig1_left: {
      RngStream shared(cfg.master_seed, kSharedStream);
      auto pop = std::make_shared<PopulationModel>(
          gen_population(n, cfg.ratio, cfg.rotation_scale, shared, detail::basis_mode(cfg)));
      for (long r = 0; r < cfg.runs; ++r)
        tasks.push_back({r, -1, [&cfg, pop, r] { return detail::fig1_left_run(cfg, *pop, r); }});
      break;
    }
    case Experiment::fig1_right: {
      for (long r = 0; r < cfg.runs; ++r) {
        RngStream s(cfg.master_seed, static_cast<std::uint64_t>(r));
        auto pop = std::make_shared<PopulationModel>(
            gen_population(n, cfg.ratio, cfg.rotation_scale, s, detail::basis_mode(cfg)));
        for (long j = 0; j < grid_size; ++j)
          tasks.push_back({r, j, [&cfg, pop, r, j] { return detail::fig1_right_task(cfg, *pop, r, j); }});
      }
      break;
    }
    case Experiment::fig2_left:
    case Experiment::fig2_right: {
      for (long r = 0; r < cfg.runs; ++r) {
        RngStream s(cfg.master_seed, static_cast<std::uint64_t>(r));
        auto pop = std::make_shared<PopulationModel>(
            gen_population(n, cfg.ratio, cfg.rotation_scale, s, detail::basis_mode(cfg)));
        for (long j = 0; j < grid_size; ++j)
          tasks.push_back({r, j, [&cfg, pop, r, j] { return detail::fig2_task(cfg, *pop, r, j); }});
      }
      break;
    }
    case Experiment::custom: {
      auto c = std::make_shared<SymmetricMatrix>(io::read_symmetric_csv(cfg.c_file));
      auto v = std::make_shared<OrthonormalBasis>(io::read_basis_csv(cfg.v_file));
      if (c->dim() != v->dim()) throw DimensionMismatch("custom experiment: C vs V", c->dim(), v->dim());
      for (long r = 0; r < cfg.runs; ++r)
        for (long j = 0; j < grid_size; ++j)
          tasks.push_back({r, j, [&cfg, c, v, r, j] { return detail::custom_task(cfg, *c, *v, r, j); }});
      break;
    }
  }

  std::vector<RunTable> results;
  std::vector<std::string> errors;
  detail::run_tasks(tasks, results, errors, workers);

  ExperimentOutput out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& t = tasks[i];
    if (!errors[i].empty()) {
      const double g = t.grid_index >= 0 ? cfg.grid[static_cast<std::size_t>(t.grid_index)] : 0.0;
      const double nan = std::numeric_limits<double>::quiet_NaN();
      out.table.push_back(detail::record(cfg, t.run, g, "error", nan, nan));
      out.failures.push_back("run " + std::to_string(t.run) + " grid " + io::format_double(g) + ": " + errors[i]);
      continue;
    }
    out.table.insert(out.table.end(), results[i].begin(), results[i].end());
  }
  const RunTable agg = aggregate(out.table);
  out.table.insert(out.table.end(), agg.begin(), agg.end());
  return out;
}

}  // namespace covkl::harness
