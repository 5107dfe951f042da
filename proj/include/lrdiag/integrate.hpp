#pragma once

// Retraction-based explicit Euler integration of projected vector fields.
// Every step keeps U on the Stiefel manifold (QR retraction), R positive
// definite (exponential retraction) and s / psi positive (additive update with
// a floor).

#include <functional>
#include <vector>

#include "lrdiag/projection.hpp"

namespace lrdiag {

struct IntegratorConfig {
  double h = 0.01;
  double t_end = 10.0;
  Index record_every = 1;
  Tolerances tol = {};

  /// Number of Euler steps covering [0, t_end] (t_end rounded to a multiple of h).
  Index steps() const;
};

/// Throws ValidationError unless h > 0, t_end >= h and record_every >= 1.
void validate(const IntegratorConfig& cfg);

/// qf(U + h dU) with the positive-diagonal sign convention.
Stiefel retract_stiefel_qr(const Stiefel& U, const Mat& dU, double h);

/// R^{1/2} exp(h R^{-1/2} dR R^{-1/2}) R^{1/2}.
SpdSmall retract_spd_exp(const SpdSmall& R, const SymSmall& dR, double h);

/// One retraction step of every factor; s and psi move additively and are
/// clamped at tol.positivity_floor * (value + 1) (counted in diag).
FactoredPsd retract(const FactoredPsd& Y, const TangentDelta& delta, double h,
                    const Tolerances& tol = default_tolerances(), Diagnostics* diag = nullptr);

/// Verifies ||U^T U - I|| <= tol.orth, R Cholesky-factorizable, s / psi > 0.
bool check_invariants(const FactoredPsd& Y, const Tolerances& tol = default_tolerances());

using DeltaFn = std::function<TangentDelta(double t, const FactoredPsd& Y, Diagnostics& diag)>;
using Observer = std::function<void(double t, Index step, const FactoredPsd& Y, const Diagnostics& diag)>;

struct EulerResult {
  FactoredPsd final_state;
  std::vector<double> times;          // recorded times, starting with t = 0
  std::vector<FactoredPsd> series;    // recorded states
  Diagnostics diag;
};

/// Repeats {delta = f(t, Y); Y = retract(Y, delta, h)} up to t_end, recording
/// every record_every steps (and the final step). Throws NonFiniteState with
/// the step index if the state stops being finite.
EulerResult euler_drive(const FactoredPsd& Y0, const DeltaFn& f, const IntegratorConfig& cfg,
                        const Observer& observer = {}, bool keep_series = true);

}  // namespace lrdiag
