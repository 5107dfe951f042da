#pragma once

// Orthogonal (Frobenius) projection of a symmetric H onto the tangent set of
// each factored form, in the parameterization
//
//   LowRank  dY = dU R U^T + U dR U^T + U R dU^T
//   Ppca     dY = dU (R-sI) U^T + U (dR - ds I) U^T + U (R-sI) dU^T + ds I
//   Fa       dY = dU R U^T + U dR U^T + U R dU^T + diag(dpsi)
//
// with U^T dU = 0 and dR symmetric.

#include <variant>

#include "lrdiag/diagnostics.hpp"
#include "lrdiag/factored.hpp"
#include "lrdiag/symop.hpp"

namespace lrdiag {

struct TangentDelta {
  Mat dU;
  SymSmall dR;
  std::variant<std::monostate, double, Vec> diag_part;

  Kind kind() const noexcept { return static_cast<Kind>(diag_part.index()); }
  double ds() const;
  const Vec& dpsi() const;

  static TangentDelta zero(const FactoredPsd& base);
};

/// Quantities of the linear-cost FA solve. Upsilon (d x p(p+1)/2) is never
/// stored; its Gram matrix is accumulated over blocks of rows of U.
struct FaSolverWorkspace {
  Vec hbar;      // diag(H)
  Vec hbar_u;    // diag(U U^T H)
  Vec lambda;    // diag(U (U^T H U) U^T)
  Vec dbar;      // diag(U U^T)
  Mat gram;      // Upsilon^T phi Upsilon, phi = (I - 2 Dbar)^{-1}
  Vec rhs_small; // Upsilon^T phi b
  bool regularized = false;
};

TangentDelta project_low_rank(const SymOp& H, const Stiefel& U, const SpdSmall& R);

TangentDelta project_ppca(const SymOp& H, const Stiefel& U, const SpdSmall& R, double s,
                          const Tolerances& tol = default_tolerances(), Diagnostics* diag = nullptr);

/// Oracle path: forms (I - UU^T)^{o2} and pseudo-inverts it. d <= tol.max_dense.
TangentDelta project_fa_dense(const SymOp& H, const Stiefel& U, const SpdSmall& R, const DiagPos& psi,
                              const Tolerances& tol = default_tolerances(), Diagnostics* diag = nullptr);

/// Linear-in-d path through the Woodbury identity on I - 2 Dbar + Upsilon Upsilon^T.
TangentDelta project_fa_fast(const SymOp& H, const Stiefel& U, const SpdSmall& R, const DiagPos& psi,
                             const Tolerances& tol = default_tolerances(), Diagnostics* diag = nullptr,
                             FaSolverWorkspace* ws = nullptr);

/// Dispatches on the form of base. FA uses the fast path unless its small
/// system is larger than d itself (p(p+1)/2 > d, d <= tol.max_dense), where
/// the direct d x d solve is cheaper.
TangentDelta project(const SymOp& H, const FactoredPsd& base,
                     const Tolerances& tol = default_tolerances(), Diagnostics* diag = nullptr);

/// ||H - P(H)||_F^2 in O(d * width^2 + d p^2), using delta's diagonal part.
double residual_norm_sq(const SymOp& H, const FactoredPsd& base, const TangentDelta& delta);

/// ||dY||_F^2 of the tangent matrix encoded by delta, linear in d.
double tangent_norm_sq(const FactoredPsd& base, const TangentDelta& delta);

/// Dense dY (test utility, d <= tol.max_dense).
Mat tangent_to_dense(const FactoredPsd& base, const TangentDelta& delta,
                     const Tolerances& tol = default_tolerances());

namespace detail {

/// (I - U U^T) X
Mat project_out(const Mat& U, const Mat& X);

/// X (R - sI)^{-1}, Tikhonov-shifted when sigma_min(R - sI) < tol.sing * ||R||_2.
Mat solve_shifted_right(const Mat& X, const Mat& R, double s, const Tolerances& tol, Diagnostics* diag);

/// row_k(A) . row_k(B) for every k.
Vec row_dots(const Mat& A, const Mat& B);

/// diag((I-UU^T) H (I-UU^T)) assembled from diag(H), H U and U^T H U.
Vec fa_normal_rhs(const Vec& hbar, const Mat& HU, const Mat& UtHU, const Mat& U, FaSolverWorkspace* ws);

/// Solves (I-UU^T)^{o2} x = b (= (I - 2 Dbar + Upsilon Upsilon^T) x = b) in
/// O(d p^4 + p^6), falling back to a ridge-regularized matrix-free solve.
Vec fa_diagonal_solve(const Mat& U, const Vec& b, const Tolerances& tol, Diagnostics* diag,
                      FaSolverWorkspace* ws);

/// Direct pseudo-inverse solve of (I-UU^T)^{o2} x = b; O(d^3), d <= tol.max_dense.
Vec fa_diagonal_solve_dense(const Mat& U, const Vec& b, const Tolerances& tol);

/// True when p(p+1)/2 > d and the dense solve is allowed.
bool fa_prefers_dense(Index d, Index p, const Tolerances& tol);

/// fa_diagonal_solve, or fa_diagonal_solve_dense when fa_prefers_dense.
Vec fa_diagonal_solve_auto(const Mat& U, const Vec& b, const Tolerances& tol, Diagnostics* diag,
                           FaSolverWorkspace* ws);

}  // namespace detail

}  // namespace lrdiag
