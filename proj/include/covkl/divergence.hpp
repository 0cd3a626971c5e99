#pragma once

// Kullback-Leibler functionals KL(P(.; C) || P(.; Xi)) for zero-mean Gaussian
// and Student's t laws sharing the same degrees of freedom. All values in nats.
//
// Student's t densities are parametrised by their scale matrix; see
// sampling.hpp for the covariance relation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "covkl/errors.hpp"
#include "covkl/linalg.hpp"
#include "covkl/quadrature.hpp"
#include "covkl/rng.hpp"
#include "covkl/running_stats.hpp"
#include "covkl/sampling.hpp"

namespace covkl {

enum class EstimatorKind { closed_form, monte_carlo, quadrature, asymptotic };

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::closed_form: return "closed_form";
    case EstimatorKind::monte_carlo: return "monte_carlo";
    case EstimatorKind::quadrature: return "quadrature";
    case EstimatorKind::asymptotic: return "asymptotic";
  }
  return "?";
}

struct KlEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t n_samples = 0;
  EstimatorKind kind = EstimatorKind::closed_form;
  /// Quadrature only: upper bound on the probability mass outside the box.
  std::optional<double> truncation_mass;
};

/// Zero-mean Student's t (or Gaussian, nu = inf) density with a factored
/// scale matrix.
class StudentT {
 public:
  StudentT(const SymmetricMatrix& scale, double nu) : factor_(scale, "StudentT scale"), nu_(nu) { init(); }
  StudentT(const OrthonormalBasis& v, const Spectrum& l, double nu) : factor_(v, l), nu_(nu) { init(); }

  Eigen::Index dim() const { return factor_.dim(); }
  double nu() const { return nu_; }
  bool gaussian() const { return std::isinf(nu_); }
  const SpdFactor& factor() const { return factor_; }

  /// x' S^-1 x for every row of `rows`.
  Vector mahalanobis(const Matrix& rows) const { return (rows * whitener_).rowwise().squaredNorm(); }

  double mahalanobis(const Vector& x) const { return (whitener_.transpose() * x).squaredNorm(); }

  /// Log density from a precomputed Mahalanobis form q = x' S^-1 x.
  double logpdf_from_q(double q) const {
    if (gaussian()) return log_norm_ - 0.5 * q;
    return log_norm_ - 0.5 * (static_cast<double>(dim()) + nu_) * std::log1p(q / nu_);
  }

  double logpdf(const Vector& x) const {
    if (x.size() != dim()) throw DimensionMismatch("StudentT::logpdf", dim(), x.size());
    return logpdf_from_q(mahalanobis(x));
  }

 private:
  void init() {
    if (!(nu_ > 0.0)) throw InvalidArgument("StudentT: nu must be > 0");
    whitener_ = factor_.whitener();
    const double n = static_cast<double>(dim());
    if (gaussian()) {
      log_norm_ = -0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5 * factor_.logdet();
    } else {
      log_norm_ = std::lgamma(0.5 * (nu_ + n)) - std::lgamma(0.5 * nu_) - 0.5 * n * std::log(nu_ * std::numbers::pi) -
                  0.5 * factor_.logdet();
    }
  }

  SpdFactor factor_;
  double nu_;
  Matrix whitener_;
  double log_norm_ = 0.0;
};

inline double logpdf_t(const Vector& x, const SymmetricMatrix& c, double nu) { return StudentT(c, nu).logpdf(x); }

/// Sufficient statistics of a (C, Xi) pair for every deterministic functional:
/// log-determinants, tr(C Xi^-1) and tr((C Xi^-1)^2).
struct PairStats {
  Eigen::Index n = 0;
  double logdet_c = 0.0;
  double logdet_xi = 0.0;
  double trace_c_xiinv = 0.0;
  double trace_c_xiinv_sq = 0.0;

  double dim() const { return static_cast<double>(n); }
  /// Normalised trace tr(C Xi^-1) / n.
  double tau1() const { return trace_c_xiinv / dim(); }
  double tau2() const { return trace_c_xiinv_sq / dim(); }
};

inline PairStats pair_stats(const SpdFactor& c, const SpdFactor& xi, const SymmetricMatrix& c_matrix) {
  if (c.dim() != xi.dim()) throw DimensionMismatch("pair_stats", c.dim(), xi.dim());
  const SymmetricMatrix xi_inv = xi.inverse();
  return {c.dim(), c.logdet(), xi.logdet(), trace_product(c_matrix, xi_inv), trace_quad(c_matrix, xi_inv)};
}

inline PairStats pair_stats(const SymmetricMatrix& c, const SymmetricMatrix& xi) {
  if (c.dim() != xi.dim()) throw DimensionMismatch("pair_stats", c.dim(), xi.dim());
  return pair_stats(SpdFactor(c, "C"), SpdFactor(xi, "Xi"), c);
}

/// Statistics for Xi = V diag(L) V' without an eigensolve of Xi.
inline PairStats pair_stats(const SymmetricMatrix& c, const OrthonormalBasis& v, const Spectrum& l) {
  return pair_stats(SpdFactor(c, "C"), SpdFactor(v, l), c);
}

// ---------------------------------------------------------------------------
// Gaussian closed form

inline double kl_gaussian_value(const PairStats& s) {
  return 0.5 * (s.trace_c_xiinv - s.dim() + s.logdet_xi - s.logdet_c);
}

inline KlEstimate kl_gaussian(const SymmetricMatrix& c, const SymmetricMatrix& xi) {
  return {kl_gaussian_value(pair_stats(c, xi)), 0.0, 0, EstimatorKind::closed_form, std::nullopt};
}

// ---------------------------------------------------------------------------
// Monte Carlo

inline constexpr Eigen::Index kMcChunkRows = 4096;

namespace detail {

/// Per-draw log-likelihood ratios log P(x;C) - log P(x;Xi) without the
/// normalising constants that cancel for equal nu.
inline Vector log_ratio_terms(const StudentT& c, const StudentT& xi, const Matrix& rows) {
  const Vector qc = c.mahalanobis(rows);
  const Vector qx = xi.mahalanobis(rows);
  const double half_ld = 0.5 * (xi.factor().logdet() - c.factor().logdet());
  Vector out(rows.rows());
  if (c.gaussian()) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = half_ld - 0.5 * (qc[i] - qx[i]);
  } else {
    const double nu = c.nu();
    const double expo = 0.5 * (static_cast<double>(c.dim()) + nu);
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = half_ld - expo * (std::log1p(qc[i] / nu) - std::log1p(qx[i] / nu));
  }
  return out;
}

}  // namespace detail

/// Monte Carlo KL(t(C, nu) || t(Xi, nu)) from m draws of t(C, nu).
///
/// Draws are produced in fixed chunks of kMcChunkRows rows; chunk j uses
/// substream j of `rng`, and chunk statistics are merged in chunk order, so
/// the estimate does not depend on `workers`.
inline KlEstimate kl_t_mc(const SymmetricMatrix& c, const SymmetricMatrix& xi, double nu, std::int64_t m,
                          const RngStream& rng, int workers = 1) {
  if (m < 2) throw InvalidArgument("kl_t_mc: need at least 2 samples");
  if (c.dim() != xi.dim()) throw DimensionMismatch("kl_t_mc", c.dim(), xi.dim());
  const StudentT pc(c, nu);
  const StudentT px(xi, nu);
  const std::int64_t chunks = (m + kMcChunkRows - 1) / kMcChunkRows;
  std::vector<RunningStats> partial(static_cast<std::size_t>(chunks));

  auto run_chunk = [&](std::int64_t j) {
    RngStream sub = rng.substream(static_cast<std::uint64_t>(j));
    const Eigen::Index rows = static_cast<Eigen::Index>(std::min<std::int64_t>(kMcChunkRows, m - j * kMcChunkRows));
    const SampleBlock block = sample_mvt(c, nu, rows, sub);
    const Vector terms = detail::log_ratio_terms(pc, px, block.data);
    RunningStats st;
    for (Eigen::Index i = 0; i < terms.size(); ++i) st.push(terms[i]);
    partial[static_cast<std::size_t>(j)] = st;
  };

  const int w = std::max(1, std::min<int>(workers, static_cast<int>(chunks)));
  if (w == 1) {
    for (std::int64_t j = 0; j < chunks; ++j) run_chunk(j);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < w; ++t) {
      pool.emplace_back([&, t] {
        for (std::int64_t j = t; j < chunks; j += w) run_chunk(j);
      });
    }
    for (auto& th : pool) th.join();
  }

  RunningStats total;
  for (const auto& st : partial) total.merge(st);
  if (!std::isfinite(total.mean)) throw NumericalError("kl_t_mc: non-finite estimate");
  return {total.mean, total.std_error(), total.count, EstimatorKind::monte_carlo, std::nullopt};
}

// ---------------------------------------------------------------------------
// Two-dimensional quadrature

/// Upper bound on P(|x| > r) for x ~ t(C, nu) in two dimensions, using
/// x'C^-1 x / 2 ~ F(2, nu) and |x|^2 <= lambda_max(C) x'C^-1 x.
inline double radial_tail_mass_2d(double lambda_max, double nu, double r) {
  const double q = r * r / lambda_max;
  if (std::isinf(nu)) return std::exp(-0.5 * q);
  return std::exp(-0.5 * nu * std::log1p(q / nu));
}

/// Tensor-product Gauss-Legendre quadrature of P(x;C) log(P(x;C)/P(x;Xi)) over
/// [-half_width, half_width]^2 with `grid_points` nodes per axis.
inline KlEstimate kl_t_quadrature2(const SymmetricMatrix& c, const SymmetricMatrix& xi, double nu,
                                   double half_width = 100.0, int grid_points = 2001) {
  if (c.dim() != 2 || xi.dim() != 2) throw InvalidArgument("kl_t_quadrature2: both matrices must be 2x2");
  if (!(half_width > 0.0)) throw InvalidArgument("kl_t_quadrature2: half_width must be > 0");
  if (grid_points < 64) throw InvalidArgument("kl_t_quadrature2: grid_points must be >= 64");
  const StudentT pc(c, nu);
  const StudentT px(xi, nu);
  const QuadratureRule rule = gauss_legendre(grid_points, -half_width, half_width);
  const std::size_t g = rule.nodes.size();

  // Inverse scale entries for direct 2x2 quadratic forms.
  const Matrix ic = pc.factor().inverse().dense();
  const Matrix ix = px.factor().inverse().dense();

  double total = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    const double x0 = rule.nodes[i];
    double row = 0.0;
    for (std::size_t j = 0; j < g; ++j) {
      const double x1 = rule.nodes[j];
      const double qc = ic(0, 0) * x0 * x0 + 2.0 * ic(0, 1) * x0 * x1 + ic(1, 1) * x1 * x1;
      const double qx = ix(0, 0) * x0 * x0 + 2.0 * ix(0, 1) * x0 * x1 + ix(1, 1) * x1 * x1;
      const double lc = pc.logpdf_from_q(qc);
      const double lx = px.logpdf_from_q(qx);
      row += rule.weights[j] * std::exp(lc) * (lc - lx);
    }
    total += rule.weights[i] * row;
  }
  KlEstimate out{total, 0.0, static_cast<std::int64_t>(g * g), EstimatorKind::quadrature, std::nullopt};
  out.truncation_mass = radial_tail_mass_2d(pc.factor().eigenvalues().maxCoeff(), nu, half_width);
  return out;
}

// ---------------------------------------------------------------------------
// Quadratic-form moments and the variance of the log argument

/// Moments of a = x' Xi^-1 x and b = x' C^-1 x for x ~ t(C, nu).
struct QfMoments {
  double e_a = 0.0;
  double e_b = 0.0;
  double v_a = 0.0;
  double v_b = 0.0;
  double cov_ab = 0.0;
  double nu = 0.0;
  bool variance_available = false;  // false when nu <= 4
};

/// x = sqrt(w) z with z ~ N(0, C) and w = nu/u independent; Gaussian forms give
/// E[z'Az] = tr(AC), Cov(z'Az, z'Bz) = 2 tr(ACBC), while E[w] = nu/(nu-2) and
/// E[w^2] = nu^2/((nu-2)(nu-4)).
inline QfMoments qf_moments(const PairStats& s, double nu) {
  if (!(nu > 2.0)) throw InvalidArgument("qf_moments: expectations require nu > 2");
  const double n = s.dim();
  const double t1 = s.trace_c_xiinv;
  const double t2 = s.trace_c_xiinv_sq;
  QfMoments q;
  q.nu = nu;
  if (std::isinf(nu)) {
    q.e_a = t1;
    q.e_b = n;
    q.v_a = 2.0 * t2;
    q.v_b = 2.0 * n;
    q.cov_ab = 2.0 * t1;
    q.variance_available = true;
    return q;
  }
  const double ew = nu / (nu - 2.0);
  q.e_a = ew * t1;
  q.e_b = ew * n;
  if (nu > 4.0) {
    const double ew2 = nu * nu / ((nu - 2.0) * (nu - 4.0));
    q.v_a = ew2 * (2.0 * t2 + t1 * t1) - q.e_a * q.e_a;
    q.v_b = ew2 * (2.0 * n + n * n) - q.e_b * q.e_b;
    q.cov_ab = ew2 * (2.0 * t1 + n * t1) - q.e_a * q.e_b;
    q.variance_available = true;
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    q.v_a = q.v_b = q.cov_ab = nan;
  }
  return q;
}

inline QfMoments qf_moments(const SymmetricMatrix& c, const SymmetricMatrix& xi, double nu) {
  return qf_moments(pair_stats(c, xi), nu);
}

/// First-order two-variable Taylor variance of (1 + a/nu) / (1 + b/nu) around
/// the means of a and b.
inline double ratio_variance_taylor(const QfMoments& q) {
  if (!q.variance_available) throw InvalidArgument("ratio_variance_taylor: variances need nu > 4");
  const double c = 1.0 / q.nu;
  const double da = 1.0 + c * q.e_a;
  const double db = 1.0 + c * q.e_b;
  return c * c * (q.v_a / (db * db) - 2.0 * da / (db * db * db) * q.cov_ab + da * da / (db * db * db * db) * q.v_b);
}

/// Collapsed closed form of the same variance in terms of the normalised
/// traces tau1 = tr(C Xi^-1)/n and tau2 = tr((C Xi^-1)^2)/n.
inline double ratio_variance(double n, double tau1, double tau2, double nu) {
  if (!(nu > 4.0) || std::isinf(nu)) throw InvalidArgument("ratio_variance: requires finite nu > 4");
  const double k = nu - 2.0;
  const double d = nu + n - 2.0;
  return 2.0 * k * n * (nu - n * tau1 * tau1 + tau2 * d - 2.0 * k * tau1 - 2.0) / ((nu - 4.0) * d * d * d);
}

inline double ratio_variance(const PairStats& s, double nu) { return ratio_variance(s.dim(), s.tau1(), s.tau2(), nu); }

inline double ratio_variance(const SymmetricMatrix& c, const SymmetricMatrix& xi, double nu) {
  return ratio_variance(pair_stats(c, xi), nu);
}

// ---------------------------------------------------------------------------
// Large-n asymptotics

/// Large-n approximation obtained by replacing the quadratic forms inside the
/// logarithm by their expectations.
inline double kl_t_largen_value(const PairStats& s, double nu) {
  if (!(nu > 2.0)) throw InvalidArgument("kl_t_largen: requires nu > 2");
  if (std::isinf(nu)) return kl_gaussian_value(s);
  const double n = s.dim();
  return 0.5 * (s.logdet_xi - s.logdet_c + (n + nu) * std::log1p((s.trace_c_xiinv - n) / (nu - 2.0 + n)));
}

inline KlEstimate kl_t_largen(const SymmetricMatrix& c, const SymmetricMatrix& xi, double nu) {
  return {kl_t_largen_value(pair_stats(c, xi), nu), 0.0, 0, EstimatorKind::asymptotic, std::nullopt};
}

/// Normalised large-n limit KL/n for Student's t; free of nu.
inline double kl_t_asym_normalized(const PairStats& s) {
  return 0.5 * ((s.logdet_xi - s.logdet_c) / s.dim() + std::log(s.tau1()));
}

inline double kl_t_asym_normalized(const SymmetricMatrix& c, const SymmetricMatrix& xi) {
  return kl_t_asym_normalized(pair_stats(c, xi));
}

/// Gaussian KL/n; equal to kl_gaussian / n.
inline double kl_gauss_normalized(const PairStats& s) {
  return 0.5 * ((s.logdet_xi - s.logdet_c) / s.dim() + s.tau1() - 1.0);
}

inline double kl_gauss_normalized(const SymmetricMatrix& c, const SymmetricMatrix& xi) {
  return kl_gauss_normalized(pair_stats(c, xi));
}

/// Normalised limit when nu = h n grows with n.
inline double kl_h(const PairStats& s, double h) {
  if (!(h > 0.0)) throw InvalidArgument("kl_h: h must be > 0");
  const double ld = (s.logdet_xi - s.logdet_c) / s.dim();
  // (1+h) log((h + tau1)/(1 + h)), written with log1p for large h.
  return 0.5 * (ld + (1.0 + h) * std::log1p((s.tau1() - 1.0) / (1.0 + h)));
}

inline double kl_h(const SymmetricMatrix& c, const SymmetricMatrix& xi, double h) { return kl_h(pair_stats(c, xi), h); }

/// Normalised KL at the Frobenius oracle spectrum diag(V'CV):
/// (log det Xi(L_F) - log det C) / (2n).
inline double kl_oracle_asym(const SymmetricMatrix& c, const OrthonormalBasis& v) {
  if (c.dim() != v.dim()) throw DimensionMismatch("kl_oracle_asym", c.dim(), v.dim());
  const Vector lf = (v.matrix().transpose() * c.dense() * v.matrix()).diagonal();
  const SpdFactor fc(c, "C");
  const Spectrum oracle(lf);
  return 0.5 * (logdet(oracle) - fc.logdet()) / static_cast<double>(c.dim());
}

}  // namespace covkl
