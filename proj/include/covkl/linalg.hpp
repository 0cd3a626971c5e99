#pragma once

// Dense symmetric-matrix primitives shared by every estimator in the library.
//
// Rotational invariant estimators are matrices of the form V diag(L) V' with a
// fixed orthonormal basis V and an adjustable spectrum L. All inverses and
// log-determinants of such matrices are formed spectrally.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "covkl/errors.hpp"

namespace covkl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Smallest admissible eigenvalue of an SPD input, relative to the largest.
inline constexpr double kSpdRelativeFloor = 1e-12;
inline constexpr double kOrthonormalTolerance = 1e-10;

/// Real symmetric matrix. The lower triangle is authoritative and mirrored
/// into the upper one on construction, so A(i,j) == A(j,i) bit for bit.
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;

  /// Builds from the lower triangle of `m`; the strict upper triangle is ignored.
  static SymmetricMatrix from_lower(const Matrix& m) {
    if (m.rows() != m.cols()) {
      throw InvalidArgument("SymmetricMatrix: matrix is not square (" + std::to_string(m.rows()) +
                            "x" + std::to_string(m.cols()) + ")");
    }
    if (m.rows() < 1) throw InvalidArgument("SymmetricMatrix: dimension must be >= 1");
    SymmetricMatrix s;
    s.a_ = m.selfadjointView<Eigen::Lower>();
    return s;
  }

  /// Builds from a full matrix after checking |m - m'| <= tol * max|m|.
  static SymmetricMatrix checked(const Matrix& m, double rel_tol = 1e-12) {
    if (m.rows() != m.cols()) {
      throw InvalidArgument("SymmetricMatrix: matrix is not square");
    }
    if (!m.allFinite()) throw InvalidArgument("SymmetricMatrix: non-finite entries");
    const double scale = m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
    const double asym = m.size() ? (m - m.transpose()).cwiseAbs().maxCoeff() : 0.0;
    if (asym > rel_tol * scale) {
      std::ostringstream os;
      os << "SymmetricMatrix: input is not symmetric (max |A - A'| = " << asym << ")";
      throw InvalidArgument(os.str());
    }
    return from_lower(m);
  }

  static SymmetricMatrix identity(Eigen::Index n) { return from_lower(Matrix::Identity(n, n)); }

  static SymmetricMatrix diagonal(const Vector& d) { return from_lower(d.asDiagonal().toDenseMatrix()); }

  Eigen::Index dim() const { return a_.rows(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return a_(i, j); }
  const Matrix& dense() const { return a_; }

 private:
  Matrix a_;
};

/// Positive eigenvalue vector. Ordering is not imposed: spectra attached to a
/// fixed RIE basis follow the column order of that basis.
class Spectrum {
 public:
  Spectrum() = default;

  explicit Spectrum(Vector values, std::optional<double> trace_target = std::nullopt)
      : values_(std::move(values)), trace_target_(trace_target) {
    if (values_.size() < 1) throw InvalidArgument("Spectrum: empty");
    for (Eigen::Index k = 0; k < values_.size(); ++k) {
      if (!(values_[k] > 0.0) || !std::isfinite(values_[k])) {
        std::ostringstream os;
        os << "Spectrum: eigenvalue " << k << " = " << values_[k] << " is not strictly positive";
        throw InvalidArgument(os.str());
      }
    }
    if (trace_target_) {
      const double n = static_cast<double>(values_.size());
      const double gap = std::abs(values_.sum() - *trace_target_);
      if (gap > 1e-10 * n) {
        std::ostringstream os;
        os << "Spectrum: trace " << values_.sum() << " misses target " << *trace_target_;
        throw InvalidArgument(os.str());
      }
    }
  }

  Eigen::Index size() const { return values_.size(); }
  double operator[](Eigen::Index k) const { return values_[k]; }
  const Vector& values() const { return values_; }
  std::optional<double> trace_target() const { return trace_target_; }

 private:
  Vector values_;
  std::optional<double> trace_target_;
};

/// n x n matrix with orthonormal columns v_k. Determinant -1 is accepted.
class OrthonormalBasis {
 public:
  OrthonormalBasis() = default;

  explicit OrthonormalBasis(Matrix columns, double tol = kOrthonormalTolerance)
      : v_(std::move(columns)) {
    if (v_.rows() != v_.cols() || v_.rows() < 1) {
      throw InvalidArgument("OrthonormalBasis: matrix must be square and non-empty");
    }
    const double dev = orthonormality_error(v_);
    if (!(dev <= tol)) {
      std::ostringstream os;
      os << "OrthonormalBasis: max |V'V - I| = " << dev << " exceeds " << tol;
      throw InvalidArgument(os.str());
    }
  }

  static OrthonormalBasis identity(Eigen::Index n) { return OrthonormalBasis(Matrix::Identity(n, n)); }

  static double orthonormality_error(const Matrix& v) {
    const Eigen::Index n = v.cols();
    return (v.transpose() * v - Matrix::Identity(n, n)).cwiseAbs().maxCoeff();
  }

  Eigen::Index dim() const { return v_.cols(); }
  const Matrix& matrix() const { return v_; }
  auto column(Eigen::Index k) const { return v_.col(k); }

 private:
  Matrix v_;
};

struct Eigendecomposition {
  Vector eigenvalues;  // descending
  OrthonormalBasis basis;

  /// Eigenvalues as a Spectrum; throws if any is non-positive.
  Spectrum spectrum(std::optional<double> trace_target = std::nullopt) const {
    return Spectrum(eigenvalues, trace_target);
  }
};

namespace detail {

inline std::string condition_report(const Matrix& m) {
  std::ostringstream os;
  os << "dim=" << m.rows() << " finite=" << (m.allFinite() ? "yes" : "no");
  if (m.allFinite() && m.size()) {
    os << " max|a_ij|=" << m.cwiseAbs().maxCoeff() << " |A|_F=" << m.norm()
       << " diag range=[" << m.diagonal().minCoeff() << ", " << m.diagonal().maxCoeff() << "]";
  }
  return os.str();
}

// Flip each column so that its first component with |v_i| > eps is positive.
inline void canonicalize_signs(Matrix& v) {
  constexpr double eps = 1e-12;
  for (Eigen::Index k = 0; k < v.cols(); ++k) {
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      if (std::abs(v(i, k)) > eps) {
        if (v(i, k) < 0.0) v.col(k) = -v.col(k);
        break;
      }
    }
  }
}

}  // namespace detail

/// Symmetric eigendecomposition S = V diag(lambda) V', eigenvalues descending,
/// first significant component of every eigenvector positive.
inline Eigendecomposition eigendecompose(const SymmetricMatrix& s) {
  const Matrix& a = s.dense();
  if (!a.allFinite()) {
    throw NumericalError("eigendecompose: non-finite input (" + detail::condition_report(a) + ")");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("eigendecompose: eigensolver did not converge (" +
                         detail::condition_report(a) + ")");
  }
  const Eigen::Index n = a.rows();
  const Vector& ev = solver.eigenvalues();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  // Stable, so tied eigenvalues keep the solver's column order.
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) { return ev[i] > ev[j]; });
  Vector values(n);
  Matrix vectors(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    values[k] = ev[order[static_cast<std::size_t>(k)]];
    vectors.col(k) = solver.eigenvectors().col(order[static_cast<std::size_t>(k)]);
  }
  detail::canonicalize_signs(vectors);
  return {std::move(values), OrthonormalBasis(std::move(vectors))};
}

/// Throws NotPositiveDefinite unless min eigenvalue > kSpdRelativeFloor * max.
inline void require_spd(const Vector& eigenvalues, const std::string& what) {
  const double hi = eigenvalues.maxCoeff();
  const double lo = eigenvalues.minCoeff();
  if (!(hi > 0.0) || !(lo > kSpdRelativeFloor * hi)) {
    std::ostringstream os;
    os << what << ": matrix is not SPD (eigenvalue range [" << lo << ", " << hi << "])";
    throw NotPositiveDefinite(os.str());
  }
}

/// Xi(L) = V diag(L) V'.
inline SymmetricMatrix rie_build(const OrthonormalBasis& v, const Spectrum& l) {
  if (v.dim() != l.size()) throw DimensionMismatch("rie_build", v.dim(), l.size());
  const Matrix& q = v.matrix();
  return SymmetricMatrix::from_lower(q * l.values().asDiagonal() * q.transpose());
}

/// Xi(L)^-1 = V diag(1/L) V'.
inline SymmetricMatrix rie_inverse(const OrthonormalBasis& v, const Spectrum& l) {
  if (v.dim() != l.size()) throw DimensionMismatch("rie_inverse", v.dim(), l.size());
  const Matrix& q = v.matrix();
  return SymmetricMatrix::from_lower(q * l.values().cwiseInverse().asDiagonal() * q.transpose());
}

/// log det of V diag(L) V', summed in log space.
inline double logdet(const Spectrum& l) { return l.values().array().log().sum(); }

/// tr(A B) = sum_ij A_ij B_ij for symmetric A, B.
inline double trace_product(const SymmetricMatrix& a, const SymmetricMatrix& b) {
  if (a.dim() != b.dim()) throw DimensionMismatch("trace_product", a.dim(), b.dim());
  return a.dense().cwiseProduct(b.dense()).sum();
}

/// tr(A B A B).
inline double trace_quad(const SymmetricMatrix& a, const SymmetricMatrix& b) {
  if (a.dim() != b.dim()) throw DimensionMismatch("trace_quad", a.dim(), b.dim());
  const Matrix ab = a.dense() * b.dense();
  return ab.cwiseProduct(ab.transpose()).sum();
}

/// sum_ij (A_ij - B_ij)^2.
inline double frobenius_distance_sq(const SymmetricMatrix& a, const SymmetricMatrix& b) {
  if (a.dim() != b.dim()) throw DimensionMismatch("frobenius_distance_sq", a.dim(), b.dim());
  return (a.dense() - b.dense()).squaredNorm();
}

/// Spectral factorization of a validated SPD matrix. Cached pieces used by
/// densities, samplers and KL functionals.
class SpdFactor {
 public:
  explicit SpdFactor(const SymmetricMatrix& s, const std::string& what = "SPD input")
      : eig_(eigendecompose(s)) {
    require_spd(eig_.eigenvalues, what);
    logdet_ = eig_.eigenvalues.array().log().sum();
  }

  /// From an RIE: no eigensolve needed.
  SpdFactor(const OrthonormalBasis& v, const Spectrum& l) : eig_{l.values(), v} {
    if (v.dim() != l.size()) throw DimensionMismatch("SpdFactor", v.dim(), l.size());
    require_spd(l.values(), "SpdFactor");
    logdet_ = covkl::logdet(l);
  }

  Eigen::Index dim() const { return eig_.eigenvalues.size(); }
  double logdet() const { return logdet_; }
  const Vector& eigenvalues() const { return eig_.eigenvalues; }
  const OrthonormalBasis& basis() const { return eig_.basis; }

  SymmetricMatrix inverse() const {
    const Matrix& q = eig_.basis.matrix();
    return SymmetricMatrix::from_lower(q * eig_.eigenvalues.cwiseInverse().asDiagonal() * q.transpose());
  }

  /// W with W W' = S^-1, so that |W' x|^2 = x' S^-1 x.
  Matrix whitener() const {
    return eig_.basis.matrix() * eig_.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal();
  }

 private:
  Eigendecomposition eig_;
  double logdet_ = 0.0;
};

}  // namespace covkl
