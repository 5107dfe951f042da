#pragma once

// Gaussian variational inference as a covariance flow:
//
//   dmu/dt = -E[grad V(X)],   dP/dt = 2 eps I - E[hess V] P - P E[hess V],
//
// with X ~ N(mu, P). Expectations come either from K fresh samples per step
// (Stein's identity: E[hess V] P ~ D B^T) or, for Gaussian targets, in closed
// form. The covariance is kept in PPCA form (or, experimentally, FA form).

#include <functional>
#include <optional>
#include <vector>

#include "lrdiag/integrate.hpp"
#include "lrdiag/riccati.hpp"

namespace lrdiag {

struct TargetPotential {
  std::function<Vec(const Vec&)> grad_v;
  double epsilon = 1.0;
  std::optional<Vec> m;  // Gaussian target V(x) = 1/2 (x-m)^T M^{-1} (x-m)
  std::optional<Mat> M;

  Index dim() const;
  bool is_gaussian() const { return m.has_value() && M.has_value(); }

  static TargetPotential gaussian(Vec m, Mat M, double epsilon);
  /// V constant: zero gradient, pure diffusion.
  static TargetPotential flat(Index d, double epsilon);
};

struct SteinFactors {
  Mat D;  // (1/sqrt K) [grad V(x^k)]
  Mat B;  // (1/sqrt K) [x^k - mu]
  Index K = 0;
};

/// samples is d x K.
SteinFactors stein_factors(const TargetPotential& potential, const Vec& mu, const Mat& samples);

/// Projected covariance field for H = 2 eps I - (D B^T + B D^T), PPCA form.
TangentDelta vi_ppca_delta(const Stiefel& U, const SpdSmall& R, double s, const SteinFactors& f, double epsilon,
                           const Tolerances& tol = default_tolerances(), Diagnostics* diag = nullptr);

/// Same field projected with the generic projector for any form (FA is an
/// extrapolation of the PPCA construction).
TangentDelta vi_generic_delta(const FactoredPsd& Y, const SteinFactors& f, double epsilon,
                              const Tolerances& tol = default_tolerances(), Diagnostics* diag = nullptr);

enum class Expectation { MonteCarlo, ExactGaussian };

struct VIConfig {
  IntegratorConfig integ;
  Index K = 1000;
  Expectation mode = Expectation::MonteCarlo;
};

struct VIRow {
  double t;
  double mu_err;     // ||mu - m|| (NaN without an exact target)
  double s;          // complement variance (mean psi for FA)
  double angle;      // max principal angle between span U and the top-p eigenspace of M (NaN without target)
  double cov_err;    // ||Y - eps M||_F / ||eps M||_F (NaN without target or when d is too large)
};

struct VIRun {
  std::vector<VIRow> rows;
  Vec mu;
  FactoredPsd cov;
  Diagnostics diag;
};

/// Exact mode requires a Gaussian target and runs the PPCA Riccati field with
/// A = -M^{-1}, Q = 2 eps I.
VIRun vi_run(const TargetPotential& potential, const Vec& mu0, const FactoredPsd& Y0, const VIConfig& cfg, Rng& rng);

struct GaussianTrajectory {
  std::vector<double> times;
  std::vector<Vec> mu;
  std::vector<Mat> P;
};

/// Dense RK4 of dmu/dt = -M^{-1}(mu - m), dP/dt = 2 eps I - M^{-1} P - P M^{-1}.
GaussianTrajectory gaussian_target_reference(const Vec& m, const Mat& M, double epsilon, const Vec& mu0,
                                             const Mat& P0, const IntegratorConfig& cfg);

/// Largest principal angle (radians) between the column spans of two
/// matrices with orthonormal columns.
double max_principal_angle(const Mat& A, const Mat& B);

/// Orthonormal basis of the top-p eigenspace of a symmetric matrix.
Mat top_eigenspace(const Mat& M, Index p);

}  // namespace lrdiag
