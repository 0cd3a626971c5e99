#pragma once

// Spectrum estimation on a fixed RIE basis V: the Frobenius oracle, the
// Gaussian KL gradient, and a constrained minimiser for KL objectives.
//
// The minimiser works on lambda in R^n subject to lambda_k >= floor and,
// optionally, sum(lambda) = n. Each iteration solves the equality-constrained
// quadratic model with a positive-definite modification of the Hessian on the
// free variables, then backtracks along the step (fraction to the floor).
// When the quadratic model gives no descent, a projected-gradient step is
// taken instead.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <vector>

#include "covkl/divergence.hpp"
#include "covkl/errors.hpp"
#include "covkl/linalg.hpp"
#include "covkl/rng.hpp"
#include "covkl/running_stats.hpp"
#include "covkl/sampling.hpp"

namespace covkl {

/// Lambda_F = diag(V' C V).
inline Spectrum oracle_frobenius(const SymmetricMatrix& c, const OrthonormalBasis& v) {
  if (c.dim() != v.dim()) throw DimensionMismatch("oracle_frobenius", c.dim(), v.dim());
  const Matrix& q = v.matrix();
  Vector l = (q.transpose() * c.dense() * q).diagonal();
  return Spectrum(std::move(l));
}

/// d KL_gauss / d lambda_k = (1/lambda_k - v_k' C v_k / lambda_k^2) / 2.
inline Vector kl_gaussian_gradient(const SymmetricMatrix& c, const OrthonormalBasis& v, const Spectrum& l) {
  if (c.dim() != v.dim()) throw DimensionMismatch("kl_gaussian_gradient", c.dim(), v.dim());
  if (l.size() != v.dim()) throw DimensionMismatch("kl_gaussian_gradient", v.dim(), l.size());
  const Vector d = oracle_frobenius(c, v).values();
  const Vector& lam = l.values();
  return 0.5 * (lam.cwiseInverse() - d.cwiseQuotient(lam.cwiseAbs2()));
}

enum class Constraint { trace_equals_n, unconstrained };

struct OptimizerOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-4;
  Constraint constraint = Constraint::trace_equals_n;
  std::int64_t mc_samples = 10000;
  double finite_diff_step = 1e-6;
  double lambda_floor = 1e-6;
  /// Use analytic derivatives of the objective; otherwise central differences.
  bool analytic_gradient = true;
  /// Subtract the Gaussian part of each Student's t draw and add back its
  /// exact expectation (control variate with unit coefficient).
  bool control_variate = true;
  std::optional<Vector> initial;

  void validate(bool monte_carlo) const {
    if (max_iterations < 1) throw InvalidArgument("OptimizerOptions: max_iterations must be >= 1");
    if (!(gradient_tolerance > 0.0)) throw InvalidArgument("OptimizerOptions: gradient_tolerance must be > 0");
    if (!(lambda_floor > 0.0)) throw InvalidArgument("OptimizerOptions: lambda_floor must be > 0");
    if (!(finite_diff_step > 0.0)) throw InvalidArgument("OptimizerOptions: finite_diff_step must be > 0");
    if (monte_carlo && mc_samples < 100) throw InvalidArgument("OptimizerOptions: mc_samples must be >= 100");
  }

  static OptimizerOptions gaussian_defaults() {
    OptimizerOptions o;
    o.gradient_tolerance = 1e-8;
    return o;
  }
};

struct OptimResult {
  Spectrum spectrum;
  KlEstimate objective;
  int iterations = 0;
  bool converged = false;
  double kkt_residual = 0.0;
  std::vector<double> history;  // objective value at every accepted iterate
  /// Largest |sum(lambda) - n| over accepted iterates (0 when unconstrained).
  double max_trace_violation = 0.0;
};

/// Exact Gaussian KL(C || V diag(lambda) V') as a function of lambda.
class GaussianSpectrumObjective {
 public:
  GaussianSpectrumObjective(const SymmetricMatrix& c, const OrthonormalBasis& v)
      : d_(oracle_frobenius(c, v).values()), logdet_c_(SpdFactor(c, "C").logdet()) {}

  Eigen::Index dim() const { return d_.size(); }

  double value(const Vector& lam) const {
    return 0.5 * (d_.cwiseQuotient(lam).sum() - static_cast<double>(dim()) + lam.array().log().sum() - logdet_c_);
  }
  Vector gradient(const Vector& lam) const { return 0.5 * (lam.cwiseInverse() - d_.cwiseQuotient(lam.cwiseAbs2())); }
  Matrix hessian(const Vector& lam) const {
    Vector diag(dim());
    for (Eigen::Index k = 0; k < dim(); ++k) diag[k] = -0.5 / (lam[k] * lam[k]) + d_[k] / (lam[k] * lam[k] * lam[k]);
    return diag.asDiagonal();
  }
  KlEstimate estimate(const Vector& lam) const {
    return {value(lam), 0.0, 0, EstimatorKind::closed_form, std::nullopt};
  }

 private:
  Vector d_;
  double logdet_c_;
};

/// Monte Carlo KL(t(C,nu) || t(V diag(lambda) V', nu)) on a frozen sample, so
/// the objective is a smooth deterministic function of lambda.
///
/// With y_i = V' x_i and a_i = sum_k y_ik^2 / lambda_k, each draw contributes
///   (sum_k log lambda_k - log det C)/2 - (n+nu)/2 [log(1 + b_i/nu) - log(1 + a_i/nu)]
/// where b_i = x_i' C^-1 x_i. The optional control variate adds
///   (sum_k (d_k - (V'z_i)_k^2) / lambda_k - n + z_i' C^-1 z_i) / 2
/// with z_i the Gaussian part of x_i and d = diag(V'CV); it has zero mean and
/// cancels the Gaussian component of the noise.
class FrozenKlObjective {
 public:
  FrozenKlObjective(const SymmetricMatrix& c, const OrthonormalBasis& v, const SampleBlock& block,
                    bool control_variate = true)
      : nu_(block.source_nu), n_(c.dim()) {
    if (c.dim() != v.dim()) throw DimensionMismatch("FrozenKlObjective", c.dim(), v.dim());
    if (block.n_vars() != c.dim()) throw DimensionMismatch("FrozenKlObjective sample", c.dim(), block.n_vars());
    const SpdFactor fc(c, "C");
    logdet_c_ = fc.logdet();
    const Matrix w = fc.whitener();
    const Matrix y = block.data * v.matrix();
    p_ = y.cwiseAbs2();
    const Vector b = (block.data * w).rowwise().squaredNorm();
    const Eigen::Index m = block.n_samples();
    base_.resize(m);
    const double n = static_cast<double>(n_);
    for (Eigen::Index i = 0; i < m; ++i) {
      base_[i] = gaussian() ? -0.5 * b[i] : -0.5 * (n + nu_) * std::log1p(b[i] / nu_);
    }
    cv_coef_ = Vector::Zero(n_);
    if (control_variate) {
      const Matrix z = block.gaussian_parts();
      const Matrix q = (z * v.matrix()).cwiseAbs2();
      const Vector bz = (z * w).rowwise().squaredNorm();
      const Vector d = oracle_frobenius(c, v).values();
      cv_rows_ = q;
      cv_d_ = d;
      for (Eigen::Index i = 0; i < m; ++i) base_[i] += -0.5 * (n - bz[i]);
      cv_coef_ = d - q.colwise().mean().transpose();
      has_cv_ = true;
    }
  }

  Eigen::Index dim() const { return n_; }
  Eigen::Index samples() const { return p_.rows(); }
  bool gaussian() const { return std::isinf(nu_); }
  double nu() const { return nu_; }

  /// Per-draw contributions at lambda; their mean is the objective.
  Vector terms(const Vector& lam) const {
    const Vector inv = lam.cwiseInverse();
    const Vector a = p_ * inv;
    const double half_ld = 0.5 * (lam.array().log().sum() - logdet_c_);
    Vector t(samples());
    const double expo = 0.5 * (static_cast<double>(n_) + nu_);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double fit = gaussian() ? 0.5 * a[i] : expo * std::log1p(a[i] / nu_);
      t[i] = half_ld + base_[i] + fit;
    }
    if (has_cv_) t += 0.5 * ((cv_d_.transpose() * inv)(0) * Vector::Ones(samples()) - cv_rows_ * inv);
    return t;
  }

  double value(const Vector& lam) const {
    const Vector a = p_ * lam.cwiseInverse();
    double fit = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) fit += gaussian() ? 0.5 * a[i] : std::log1p(a[i] / nu_);
    fit /= static_cast<double>(samples());
    if (!gaussian()) fit *= 0.5 * (static_cast<double>(n_) + nu_);
    return 0.5 * (lam.array().log().sum() - logdet_c_) + base_.mean() + fit +
           0.5 * cv_coef_.cwiseQuotient(lam).sum();
  }

  Vector gradient(const Vector& lam) const {
    const Vector inv = lam.cwiseInverse();
    const Vector inv2 = inv.cwiseAbs2();
    const Vector a = p_ * inv;
    Vector weight(samples());
    for (Eigen::Index i = 0; i < weight.size(); ++i) weight[i] = gaussian() ? 1.0 : 1.0 / (nu_ + a[i]);
    const double scale = gaussian() ? 0.5 : 0.5 * (static_cast<double>(n_) + nu_);
    const Vector pw = p_.transpose() * weight / static_cast<double>(samples());
    return 0.5 * inv - scale * pw.cwiseProduct(inv2) - 0.5 * cv_coef_.cwiseProduct(inv2);
  }

  Matrix hessian(const Vector& lam) const {
    const Vector inv = lam.cwiseInverse();
    const Vector inv2 = inv.cwiseAbs2();
    const Vector inv3 = inv2.cwiseProduct(inv);
    const Vector a = p_ * inv;
    const double m = static_cast<double>(samples());
    Matrix h = Matrix::Zero(n_, n_);
    Vector diag = -0.5 * inv2 + cv_coef_.cwiseProduct(inv3);
    if (gaussian()) {
      diag += (p_.colwise().mean().transpose()).cwiseProduct(inv3);
    } else {
      const double scale = 0.5 * (static_cast<double>(n_) + nu_);
      Vector weight(samples());
      for (Eigen::Index i = 0; i < weight.size(); ++i) weight[i] = 1.0 / (nu_ + a[i]);
      diag += 2.0 * scale * (p_.transpose() * weight / m).cwiseProduct(inv3);
      const Matrix u = weight.asDiagonal() * p_ * inv2.asDiagonal();
      h.noalias() -= scale / m * (u.transpose() * u);
    }
    h.diagonal() += diag;
    return h;
  }

  KlEstimate estimate(const Vector& lam) const {
    const Vector t = terms(lam);
    RunningStats st;
    for (Eigen::Index i = 0; i < t.size(); ++i) st.push(t[i]);
    return {st.mean, st.std_error(), st.count, EstimatorKind::monte_carlo, std::nullopt};
  }

 private:
  double nu_;
  Eigen::Index n_;
  double logdet_c_ = 0.0;
  Matrix p_;        // (V'x_i)_k^2
  Vector base_;     // lambda-independent part of each term
  Vector cv_coef_;  // d_k - mean_i (V'z_i)_k^2
  Matrix cv_rows_;
  Vector cv_d_;
  bool has_cv_ = false;
};

namespace detail {

template <class Objective>
Vector fd_gradient(const Objective& f, const Vector& lam, double step) {
  Vector g(lam.size());
  for (Eigen::Index k = 0; k < lam.size(); ++k) {
    const double h = step * std::max(1.0, std::abs(lam[k]));
    Vector up = lam, dn = lam;
    up[k] += h;
    dn[k] -= h;
    g[k] = (f.value(up) - f.value(dn)) / (2.0 * h);
  }
  return g;
}

template <class Objective>
Matrix fd_hessian(const Objective& f, const Vector& lam, double step) {
  const Eigen::Index n = lam.size();
  Matrix h(n, n);
  const double s = std::sqrt(step);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double e = s * std::max(1.0, std::abs(lam[k]));
    Vector up = lam, dn = lam;
    up[k] += e;
    dn[k] -= e;
    h.col(k) = (fd_gradient(f, up, step) - fd_gradient(f, dn, step)) / (2.0 * e);
  }
  return 0.5 * (h + h.transpose());
}

struct ProjectedGradient {
  Vector pg;
  std::vector<bool> active;  // pinned at the floor
  double norm = 0.0;
};

inline ProjectedGradient project_gradient(const Vector& g, const Vector& lam, double floor, bool constrained) {
  const Eigen::Index n = g.size();
  ProjectedGradient out;
  out.active.assign(static_cast<std::size_t>(n), false);
  double mu = 0.0;
  // Variables at the floor whose gradient points outward stay pinned; the
  // multiplier of the trace constraint is re-estimated on the free set.
  for (int pass = 0; pass < 4; ++pass) {
    if (constrained) {
      double sum = 0.0;
      int free = 0;
      for (Eigen::Index k = 0; k < n; ++k)
        if (!out.active[static_cast<std::size_t>(k)]) {
          sum += g[k];
          ++free;
        }
      mu = free ? sum / free : 0.0;
    }
    bool changed = false;
    for (Eigen::Index k = 0; k < n; ++k) {
      const bool at_floor = lam[k] <= floor * (1.0 + 1e-12);
      const bool pin = at_floor && (g[k] - mu) > 0.0;
      if (pin != out.active[static_cast<std::size_t>(k)]) {
        out.active[static_cast<std::size_t>(k)] = pin;
        changed = true;
      }
    }
    if (!changed) break;
  }
  out.pg = Vector::Zero(n);
  for (Eigen::Index k = 0; k < n; ++k)
    if (!out.active[static_cast<std::size_t>(k)]) out.pg[k] = g[k] - mu;
  out.norm = out.pg.norm();
  return out;
}

}  // namespace detail

/// Minimises `f` over lambda >= floor (and sum lambda = n when constrained),
/// starting from `start`.
template <class Objective>
OptimResult minimize_spectrum(const Objective& f, Vector start, const OptimizerOptions& opts) {
  const Eigen::Index n = start.size();
  const bool constrained = opts.constraint == Constraint::trace_equals_n;
  const double floor = opts.lambda_floor;
  const double target = static_cast<double>(n);

  auto grad = [&](const Vector& l) -> Vector {
    return opts.analytic_gradient ? f.gradient(l) : detail::fd_gradient(f, l, opts.finite_diff_step);
  };
  auto hess = [&](const Vector& l) -> Matrix {
    return opts.analytic_gradient ? f.hessian(l) : detail::fd_hessian(f, l, opts.finite_diff_step);
  };
  auto check = [&](double v, const Vector& l) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "minimize_spectrum: objective is not finite at lambda with min " << l.minCoeff() << ", max "
         << l.maxCoeff();
      throw NumericalError(os.str());
    }
  };

  // Feasible start: clamp to the floor, then restore the trace on the free part.
  Vector lam = start.cwiseMax(floor);
  if (constrained) {
    for (int pass = 0; pass < 50; ++pass) {
      const double gap = target - lam.sum();
      if (std::abs(gap) <= 1e-13 * target) break;
      if (gap > 0.0) {
        lam.array() += gap / static_cast<double>(n);
      } else {
        const Vector above = (lam.array() - floor).matrix();
        const double room = above.sum();
        if (!(room > -gap)) throw InvalidArgument("minimize_spectrum: floor * n exceeds the trace target");
        lam -= above * (-gap / room);
        lam = lam.cwiseMax(floor);
      }
    }
  }

  OptimResult res;
  auto track_trace = [&](const Vector& l) {
    if (constrained) res.max_trace_violation = std::max(res.max_trace_violation, std::abs(l.sum() - target));
  };
  track_trace(lam);
  double fval = f.value(lam);
  check(fval, lam);
  res.history.push_back(fval);
  Vector g = grad(lam);
  auto proj = detail::project_gradient(g, lam, floor, constrained);

  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    if (proj.norm <= opts.gradient_tolerance) break;

    // Free-variable Newton step on the tangent space of the trace constraint.
    std::vector<Eigen::Index> free;
    for (Eigen::Index k = 0; k < n; ++k)
      if (!proj.active[static_cast<std::size_t>(k)]) free.push_back(k);
    const Eigen::Index nf = static_cast<Eigen::Index>(free.size());
    Vector dir = Vector::Zero(n);
    if (nf > 0) {
      const Matrix h = hess(lam);
      Matrix hf(nf, nf);
      Vector gf(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        gf[a] = g[free[a]];
        for (Eigen::Index b = 0; b < nf; ++b) hf(a, b) = h(free[a], free[b]);
      }
      Eigen::SelfAdjointEigenSolver<Matrix> es(hf);
      Vector ev = es.eigenvalues().cwiseAbs();
      const double top = std::max(ev.maxCoeff(), 1e-300);
      ev = ev.cwiseMax(1e-10 * top);
      const Matrix& q = es.eigenvectors();
      auto solve = [&](const Vector& r) -> Vector { return q * (q.transpose() * r).cwiseQuotient(ev); };
      Vector step = -solve(gf);
      if (constrained) {
        const Vector hinv_one = solve(Vector::Ones(nf));
        step += (-step.sum() / hinv_one.sum()) * hinv_one;
      }
      for (Eigen::Index a = 0; a < nf; ++a) dir[free[a]] = step[a];
    }

    auto try_direction = [&](const Vector& d) -> bool {
      const double slope = g.dot(d);
      if (!(slope < 0.0)) return false;
      double alpha_max = std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < n; ++k)
        if (d[k] < 0.0) alpha_max = std::min(alpha_max, (lam[k] - floor) / -d[k]);
      double alpha = std::min(1.0, alpha_max);
      for (int bt = 0; bt < 60 && alpha > 0.0; ++bt, alpha *= 0.5) {
        Vector cand = lam + alpha * d;
        cand = cand.cwiseMax(floor);
        if (constrained) {
          // Remove rounding drift in the trace on the free variables.
          double drift = target - cand.sum();
          int free_count = 0;
          for (Eigen::Index k = 0; k < n; ++k)
            if (cand[k] > floor) ++free_count;
          if (free_count > 0)
            for (Eigen::Index k = 0; k < n; ++k)
              if (cand[k] > floor) cand[k] += drift / free_count;
        }
        const double fc = f.value(cand);
        if (!std::isfinite(fc)) continue;
        bool accept = fc <= fval + 1e-4 * alpha * slope;
        Vector gc;
        detail::ProjectedGradient pc;
        if (!accept && fc <= fval) {
          // Near the optimum the decrease drops below rounding; accept a
          // non-increasing step that still reduces the projected gradient.
          gc = grad(cand);
          pc = detail::project_gradient(gc, cand, floor, constrained);
          accept = pc.norm < proj.norm;
        }
        if (accept) {
          if (gc.size() == 0) {
            gc = grad(cand);
            pc = detail::project_gradient(gc, cand, floor, constrained);
          }
          lam = std::move(cand);
          track_trace(lam);
          fval = fc;
          g = std::move(gc);
          proj = std::move(pc);
          res.history.push_back(fval);
          return true;
        }
      }
      return false;
    };

    if (!try_direction(dir) && !try_direction(-proj.pg)) break;
  }

  check(fval, lam);
  res.iterations = it;
  res.kkt_residual = proj.norm;
  res.converged = proj.norm <= opts.gradient_tolerance;
  res.spectrum = constrained ? Spectrum(lam, target) : Spectrum(lam);
  res.objective = f.estimate(lam);
  return res;
}

/// Minimises the exact Gaussian KL over spectra on model.rie_basis. Starts from
/// the uniform spectrum unless opts.initial is set.
inline OptimResult minimize_kl_gaussian(const PopulationModel& model,
                                        const OptimizerOptions& opts = OptimizerOptions::gaussian_defaults()) {
  opts.validate(false);
  const GaussianSpectrumObjective f(model.c, model.rie_basis);
  Vector start = opts.initial ? *opts.initial : Vector::Ones(model.dim());
  if (start.size() != model.dim()) throw DimensionMismatch("minimize_kl_gaussian initial", model.dim(), start.size());
  return minimize_spectrum(f, std::move(start), opts);
}

/// Draws the frozen sample of opts.mc_samples rows of t(C, nu) from `rng`.
inline FrozenKlObjective make_frozen_objective(const PopulationModel& model, double nu, const OptimizerOptions& opts,
                                               RngStream& rng) {
  opts.validate(true);
  const SampleBlock block = sample_mvt(model.c, nu, static_cast<Eigen::Index>(opts.mc_samples), rng);
  return FrozenKlObjective(model.c, model.rie_basis, block, opts.control_variate);
}

/// KL-optimal spectrum for Student's t populations on a frozen Monte Carlo
/// sample. Starts from the Frobenius oracle unless opts.initial is set.
inline OptimResult minimize_kl_t(const PopulationModel& model, double nu, const OptimizerOptions& opts,
                                 RngStream& rng) {
  const FrozenKlObjective f = make_frozen_objective(model, nu, opts, rng);
  Vector start = opts.initial ? *opts.initial : oracle_frobenius(model.c, model.rie_basis).values();
  if (start.size() != model.dim()) throw DimensionMismatch("minimize_kl_t initial", model.dim(), start.size());
  return minimize_spectrum(f, std::move(start), opts);
}

}  // namespace covkl
