#pragma once

// Seeded draws from zero-mean multivariate Gaussian and Student's t laws, and
// the synthetic population generator used by the experiments.
//
// Student's t draws use C as the *scale* matrix: x = z * sqrt(nu / u) with
// z ~ N(0, C) and u ~ chi-square(nu). Their covariance is nu / (nu - 2) * C.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <ostream>
#include <string>

#include "covkl/errors.hpp"
#include "covkl/linalg.hpp"
#include "covkl/matrix_io.hpp"
#include "covkl/rng.hpp"

namespace covkl {

inline constexpr double kGaussianNu = std::numeric_limits<double>::infinity();

struct SampleBlock {
  Matrix data;      // m x n, one draw per row
  double source_nu = kGaussianNu;
  Vector mixing;    // per-row nu/u for Student's t draws, empty for Gaussian
  std::uint64_t seed = 0;

  Eigen::Index n_vars() const { return data.cols(); }
  Eigen::Index n_samples() const { return data.rows(); }
  bool gaussian() const { return std::isinf(source_nu); }

  /// Gaussian parts z_i = x_i / sqrt(w_i) of a Student's t block.
  Matrix gaussian_parts() const {
    if (mixing.size() == 0) return data;
    return mixing.cwiseSqrt().cwiseInverse().asDiagonal() * data;
  }
};

namespace detail {

inline Matrix lower_cholesky(const SymmetricMatrix& c, const char* what) {
  Eigen::LLT<Matrix> llt(c.dense());
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite(std::string(what) + ": scale matrix is not SPD (" + condition_report(c.dense()) + ")");
  }
  Matrix l = llt.matrixL();
  const Vector d = l.diagonal().cwiseAbs2();
  if (!(d.minCoeff() > kSpdRelativeFloor * d.maxCoeff())) {
    throw NotPositiveDefinite(std::string(what) + ": scale matrix is numerically singular");
  }
  return l;
}

inline void check_nu(double nu, const char* what) {
  if (!(nu > 0.0)) throw InvalidArgument(std::string(what) + ": nu must be > 0");
}

}  // namespace detail

/// Draws m rows of N(0, C) through the lower Cholesky factor of C.
inline SampleBlock sample_mvn(const SymmetricMatrix& c, Eigen::Index m, RngStream& rng) {
  if (m < 1) throw InvalidArgument("sample_mvn: sample count must be >= 1");
  const Matrix l = detail::lower_cholesky(c, "sample_mvn");
  const Eigen::Index n = c.dim();
  Matrix z(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) z(i, j) = rng.normal();
  SampleBlock block;
  block.data = z * l.transpose();
  block.seed = rng.master_seed();
  return block;
}

/// Draws m rows of the Student's t law with scale C and nu degrees of freedom.
/// nu = +inf yields Gaussian rows.
inline SampleBlock sample_mvt(const SymmetricMatrix& c, double nu, Eigen::Index m, RngStream& rng) {
  detail::check_nu(nu, "sample_mvt");
  if (std::isinf(nu)) return sample_mvn(c, m, rng);
  if (m < 1) throw InvalidArgument("sample_mvt: sample count must be >= 1");
  const Matrix l = detail::lower_cholesky(c, "sample_mvt");
  const Eigen::Index n = c.dim();
  Matrix z(m, n);
  Vector w(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) z(i, j) = rng.normal();
    w[i] = nu / rng.chi_square(nu);
  }
  SampleBlock block;
  block.data = w.cwiseSqrt().asDiagonal() * (z * l.transpose());
  block.mixing = std::move(w);
  block.source_nu = nu;
  block.seed = rng.master_seed();
  return block;
}

/// Ground-truth matrix C = c_basis diag(c_spectrum) c_basis' and the perturbed
/// basis used to build estimators.
struct PopulationModel {
  SymmetricMatrix c;
  Spectrum c_spectrum;
  OrthonormalBasis c_basis;
  OrthonormalBasis rie_basis;

  Eigen::Index dim() const { return c.dim(); }
};

enum class BasisMode { random, identity };

/// Geometric spectrum lambda_k ~ ratio^-k rescaled so that it sums to n.
inline Spectrum geometric_spectrum(Eigen::Index n, double ratio) {
  if (n < 1) throw InvalidArgument("geometric_spectrum: n must be >= 1");
  if (!(ratio > 1.0)) throw InvalidArgument("geometric_spectrum: ratio must be > 1");
  const double log_span = static_cast<double>(n - 1) * std::log(ratio);
  if (log_span >= -std::log(kSpdRelativeFloor)) {
    throw InvalidArgument("geometric_spectrum: ratio^(n-1) exceeds the SPD condition limit 1e12");
  }
  Vector l(n);
  for (Eigen::Index k = 0; k < n; ++k) l[k] = std::exp(-static_cast<double>(k) * std::log(ratio));
  l *= static_cast<double>(n) / l.sum();
  // Absorb the last rounding residue so the trace hits n within an ulp or two.
  l[n - 1] += static_cast<double>(n) - l.sum();
  return Spectrum(std::move(l), static_cast<double>(n));
}

/// Applies one Givens rotation in every coordinate plane (i < j), in
/// lexicographic order, with angles drawn uniformly from [-scale, scale]:
/// the n-dimensional generalisation of a small Euler-angle rotation.
inline Matrix givens_perturb(const Matrix& basis, double scale, RngStream& rng) {
  Matrix v = basis;
  if (scale == 0.0) return v;
  const Eigen::Index n = v.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double theta = rng.uniform(-scale, scale);
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      for (Eigen::Index r = 0; r < n; ++r) {
        const double a = v(r, i);
        const double b = v(r, j);
        v(r, i) = c * a - s * b;
        v(r, j) = s * a + c * b;
      }
    }
  }
  return v;
}

inline PopulationModel gen_population(Eigen::Index n, double ratio, double rotation_scale, RngStream& rng,
                                      BasisMode basis_mode = BasisMode::random) {
  if (n < 2) throw InvalidArgument("gen_population: n must be >= 2");
  if (!(rotation_scale >= 0.0)) throw InvalidArgument("gen_population: rotation_scale must be >= 0");
  Spectrum spectrum = geometric_spectrum(n, ratio);

  Matrix basis = Matrix::Identity(n, n);
  if (basis_mode == BasisMode::random) {
    Matrix g(2 * n, n);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = 0; j < n; ++j) g(i, j) = rng.normal();
    basis = eigendecompose(SymmetricMatrix::from_lower(g.transpose() * g)).basis.matrix();
  }
  OrthonormalBasis c_basis(basis);
  OrthonormalBasis rie_basis(givens_perturb(basis, rotation_scale, rng));
  SymmetricMatrix c = rie_build(c_basis, spectrum);
  return {std::move(c), std::move(spectrum), std::move(c_basis), std::move(rie_basis)};
}

struct SampleCovariance {
  SymmetricMatrix matrix;
  bool singular_warning = false;  // m <= n or numerically rank deficient
};

/// (1/m) X'X under the zero-mean convention. `standardize` rescales to unit
/// diagonal; `subtract_mean` centres the columns first.
inline SampleCovariance sample_covariance(const SampleBlock& block, bool standardize = false,
                                          bool subtract_mean = false) {
  const Eigen::Index m = block.n_samples();
  const Eigen::Index n = block.n_vars();
  if (m < 1 || n < 1) throw InvalidArgument("sample_covariance: empty block");
  Matrix s;
  if (subtract_mean) {
    const Matrix centred = block.data.rowwise() - block.data.colwise().mean();
    s = centred.transpose() * centred / static_cast<double>(m);
  } else {
    s = block.data.transpose() * block.data / static_cast<double>(m);
  }
  if (standardize) {
    const Vector d = s.diagonal();
    if (!(d.minCoeff() > 0.0)) throw InvalidArgument("sample_covariance: zero variance column, cannot standardize");
    const Vector inv_sd = d.cwiseSqrt().cwiseInverse();
    s = inv_sd.asDiagonal() * s * inv_sd.asDiagonal();
    s.diagonal().setOnes();
  }
  SampleCovariance out{SymmetricMatrix::from_lower(s), m <= n};
  if (!out.singular_warning) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(out.matrix.dense(), Eigen::EigenvaluesOnly);
    const Vector& ev = es.eigenvalues();
    out.singular_warning = !(ev.minCoeff() > kSpdRelativeFloor * ev.maxCoeff());
  }
  return out;
}

/// `# mvt nu=<nu|inf> n=<n> seed=<seed>` followed by one draw per row.
inline void write_sample_csv(std::ostream& os, const SampleBlock& block) {
  os << "# mvt nu=" << (block.gaussian() ? std::string("inf") : io::format_double(block.source_nu))
     << " n=" << block.n_vars() << " seed=" << block.seed << "\n";
  for (Eigen::Index i = 0; i < block.n_samples(); ++i) {
    for (Eigen::Index j = 0; j < block.n_vars(); ++j) {
      if (j) os << ',';
      os << io::format_double(block.data(i, j));
    }
    os << '\n';
  }
}

inline void write_sample_csv(const std::string& path, const SampleBlock& block) {
  std::ofstream os(path);
  if (!os) throw InvalidArgument("cannot open '" + path + "' for writing");
  write_sample_csv(os, block);
}

}  // namespace covkl
