#pragma once

// Factored positive semi-definite d x d matrices whose storage is linear in d:
//
//   LowRank  Y = U R U^T
//   Ppca     Y = U R U^T + s (I - U U^T) = U (R - sI) U^T + s I
//   Fa       Y = U R U^T + diag(psi)
//
// U has p orthonormal columns, R is p x p positive definite. In the Ppca form
// only R itself must be PD; R - sI may be indefinite.

#include <cstdint>
#include <random>
#include <variant>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "lrdiag/config.hpp"
#include "lrdiag/error.hpp"

namespace lrdiag {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

/// Explicitly seeded generator used everywhere randomness is needed
/// (64-bit Mersenne twister; normals via std::normal_distribution).
using Rng = std::mt19937_64;

/// d x p matrix with orthonormal columns, 1 <= p < d.
class Stiefel {
 public:
  explicit Stiefel(Mat u, const Tolerances& tol = default_tolerances());

  /// Re-orthonormalizes an arbitrary full-column-rank d x p matrix by thin QR
  /// with a positive R diagonal. This is the explicit maintenance operation;
  /// the constructor never repairs its input.
  static Stiefel orthonormalize(const Mat& a);

  const Mat& matrix() const noexcept { return u_; }
  Index dim() const noexcept { return u_.rows(); }
  Index rank() const noexcept { return u_.cols(); }
  double orth_error() const;

 private:
  struct Trusted {};
  Stiefel(Mat u, Trusted) : u_(std::move(u)) {}
  Mat u_;
};

/// Small symmetric matrix (p x p); symmetrized on construction.
class SymSmall {
 public:
  SymSmall() = default;
  explicit SymSmall(const Mat& m);
  const Mat& matrix() const noexcept { return m_; }
  Index size() const noexcept { return m_.rows(); }

 private:
  Mat m_;
};

/// Small symmetric positive definite matrix; keeps its Cholesky factor.
class SpdSmall {
 public:
  explicit SpdSmall(const Mat& r);
  const Mat& matrix() const noexcept { return r_; }
  Index size() const noexcept { return r_.rows(); }
  const Eigen::LLT<Mat>& llt() const noexcept { return llt_; }

 private:
  Mat r_;
  Eigen::LLT<Mat> llt_;
};

/// Strictly positive diagonal, stored as a vector.
class DiagPos {
 public:
  explicit DiagPos(Vec v);
  const Vec& values() const noexcept { return v_; }
  Index size() const noexcept { return v_.size(); }

 private:
  Vec v_;
};

struct LowRank {
  Stiefel U;
  SpdSmall R;
};

struct Ppca {
  Stiefel U;
  SpdSmall R;
  double s;
};

struct Fa {
  Stiefel U;
  SpdSmall R;
  DiagPos psi;
};

enum class Kind { LowRank, Ppca, Fa };

const char* kind_name(Kind k);

class FactoredPsd {
 public:
  using Storage = std::variant<LowRank, Ppca, Fa>;

  FactoredPsd(LowRank v) : v_(std::move(v)) {}
  FactoredPsd(Ppca v);
  FactoredPsd(Fa v);

  Kind kind() const noexcept { return static_cast<Kind>(v_.index()); }
  const Stiefel& U() const;
  const SpdSmall& R() const;
  double s() const;                  // MismatchedVariant unless Ppca
  const DiagPos& psi() const;        // MismatchedVariant unless Fa
  Index dim() const { return U().dim(); }
  Index rank() const { return U().rank(); }
  const Storage& storage() const noexcept { return v_; }

 private:
  Storage v_;
};

/// Diagonal part of make_factored: none (LowRank), s (Ppca) or psi (Fa).
using DiagSpec = std::variant<std::monostate, double, Vec>;

/// Validating constructor for all three forms. Rejects orthonormality
/// violations beyond tol.orth rather than repairing them.
FactoredPsd make_factored(Kind kind, Mat U, const Mat& R, const DiagSpec& diag = {},
                          const Tolerances& tol = default_tolerances());

/// Dense d x d form. Oracle/test use only (d <= tol.max_dense).
Mat densify(const FactoredPsd& Y, const Tolerances& tol = default_tolerances());

/// Y * X without forming Y; O(dpm).
Mat apply(const FactoredPsd& Y, const Mat& X);

/// Y^{-1} * B for the invertible forms (Ppca, Fa); O(p^3 + dpm).
Mat woodbury_solve(const FactoredPsd& Y, const Mat& B);

/// n samples (columns of a d x n matrix) from N(mean, Y) with Y in Ppca form:
/// U z3 + (I - U U^T) z4 with z3 ~ N(0, R), z4 ~ N(0, s I).
Mat sample_ppca_gaussian(const Vec& mean, const FactoredPsd& Y, Index n, Rng& rng);

/// n samples from N(mean, Y) for any form: U L z1 (+ sqrt(psi) o z2 for Fa),
/// with R = L L^T; Ppca forwards to sample_ppca_gaussian.
Mat sample_gaussian(const Vec& mean, const FactoredPsd& Y, Index n, Rng& rng);

// Random instances for tests, benchmarks and experiment set-up.
Mat standard_normal(Index rows, Index cols, Rng& rng);
Stiefel random_stiefel(Index d, Index p, Rng& rng);
Mat random_spd(Index p, Rng& rng, double floor = 0.5);

}  // namespace lrdiag
