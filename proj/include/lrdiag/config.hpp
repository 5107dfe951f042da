#pragma once

#include <cstddef>

namespace lrdiag {

/// Numerical tolerances and guards used across the library. One record is
/// threaded through every operation that needs a threshold so that the
/// defaults live in exactly one place.
struct Tolerances {
  double orth = 1e-10;            // ||U^T U - I||_F accepted for a Stiefel factor
  double symmetry = 1e-12;        // ||R - R^T||_F before symmetrization is considered an error
  std::size_t max_dense = 2000;   // largest d that oracle/dense paths may materialize
  std::size_t max_width = 512;    // total factor width of a SymOp
  double sing = 1e-10;            // relative floor on sigma_min(R - sI) before the Tikhonov shift
  double phi = 1e-8;              // floor on |1 - 2 Dbar_kk| for the Woodbury FA path
  double fa_ridge = 1e-10;        // ridge of the regularized FA fallback solve
  double fa_residual = 1e-9;      // relative residual accepted from the Woodbury FA solve
  double pinv_cutoff = 1e-12;     // relative singular-value cutoff of the dense pseudo-inverse
  double positivity_floor = 1e-12;
};

inline const Tolerances& default_tolerances() {
  static const Tolerances tol{};
  return tol;
}

}  // namespace lrdiag
