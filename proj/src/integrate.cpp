#include "lrdiag/integrate.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

namespace lrdiag {

namespace {

double clamp_positive(double next, double current, const Tolerances& tol, Diagnostics* diag) {
  const double floor = tol.positivity_floor * (std::abs(current) + 1.0);
  if (next >= floor) return next;
  if (diag) ++diag->positivity_clamps;
  return floor;
}

bool finite_state(const FactoredPsd& Y) {
  if (!Y.U().matrix().allFinite() || !Y.R().matrix().allFinite()) return false;
  if (Y.kind() == Kind::Ppca) return std::isfinite(Y.s());
  if (Y.kind() == Kind::Fa) return Y.psi().values().allFinite();
  return true;
}

}  // namespace

Index IntegratorConfig::steps() const { return static_cast<Index>(std::llround(t_end / h)); }

void validate(const IntegratorConfig& cfg) {
  std::string problems;
  if (!(cfg.h > 0.0) || !std::isfinite(cfg.h)) problems += "h must be positive; ";
  if (!(cfg.t_end >= cfg.h) || !std::isfinite(cfg.t_end)) problems += "t_end must be >= h; ";
  if (cfg.record_every < 1) problems += "record_every must be >= 1; ";
  require(problems.empty(), ErrorCode::ValidationError, problems);
}

Stiefel retract_stiefel_qr(const Stiefel& U, const Mat& dU, double h) {
  require(dU.rows() == U.dim() && dU.cols() == U.rank(), ErrorCode::DimensionMismatch,
          "dU shape differs from U");
  if (h == 0.0 || dU.isZero(0.0)) return U;
  return Stiefel::orthonormalize(U.matrix() + h * dU);
}

SpdSmall retract_spd_exp(const SpdSmall& R, const SymSmall& dR, double h) {
  require(dR.size() == R.size(), ErrorCode::DimensionMismatch, "dR shape differs from R");
  if (h == 0.0 || dR.matrix().isZero(0.0)) return R;
  const Eigen::SelfAdjointEigenSolver<Mat> er(R.matrix());
  const Mat& V = er.eigenvectors();
  const Vec sq = er.eigenvalues().cwiseSqrt();
  const Mat half = V * sq.asDiagonal() * V.transpose();
  const Mat inv_half = V * sq.cwiseInverse().asDiagonal() * V.transpose();
  const Mat inner = h * (inv_half * dR.matrix() * inv_half);
  const Eigen::SelfAdjointEigenSolver<Mat> ei(0.5 * (inner + inner.transpose()));
  const Mat E = ei.eigenvectors() * ei.eigenvalues().array().exp().matrix().asDiagonal() *
                ei.eigenvectors().transpose();
  return SpdSmall(half * E * half);
}

FactoredPsd retract(const FactoredPsd& Y, const TangentDelta& delta, double h, const Tolerances& tol,
                    Diagnostics* diag) {
  require(delta.kind() == Y.kind(), ErrorCode::MismatchedVariant, "delta and state differ in form");
  Stiefel U = retract_stiefel_qr(Y.U(), delta.dU, h);
  SpdSmall R = retract_spd_exp(Y.R(), delta.dR, h);
  switch (Y.kind()) {
    case Kind::LowRank: return LowRank{std::move(U), std::move(R)};
    case Kind::Ppca: {
      const double s = clamp_positive(Y.s() + h * delta.ds(), Y.s(), tol, diag);
      return Ppca{std::move(U), std::move(R), s};
    }
    case Kind::Fa: {
      const Vec& psi = Y.psi().values();
      Vec next = psi + h * delta.dpsi();
      for (Index k = 0; k < next.size(); ++k) next[k] = clamp_positive(next[k], psi[k], tol, diag);
      return Fa{std::move(U), std::move(R), DiagPos(std::move(next))};
    }
  }
  throw Error(ErrorCode::MismatchedVariant, "unknown kind");
}

bool check_invariants(const FactoredPsd& Y, const Tolerances& tol) {
  if (!(Y.U().orth_error() <= tol.orth)) return false;
  if (Eigen::LLT<Mat>(Y.R().matrix()).info() != Eigen::Success) return false;
  if (Y.kind() == Kind::Ppca && !(Y.s() > 0.0)) return false;
  if (Y.kind() == Kind::Fa && !(Y.psi().values().minCoeff() > 0.0)) return false;
  return true;
}

EulerResult euler_drive(const FactoredPsd& Y0, const DeltaFn& f, const IntegratorConfig& cfg,
                        const Observer& observer, bool keep_series) {
  validate(cfg);
  EulerResult out{Y0, {}, {}, {}};
  const Index n = cfg.steps();
  auto record = [&](Index step) {
    const double t = static_cast<double>(step) * cfg.h;
    if (keep_series) {
      out.times.push_back(t);
      out.series.push_back(out.final_state);
    }
    if (observer) observer(t, step, out.final_state, out.diag);
  };
  record(0);
  for (Index step = 1; step <= n; ++step) {
    const double t = static_cast<double>(step - 1) * cfg.h;
    const TangentDelta delta = f(t, out.final_state, out.diag);
    try {
      out.final_state = retract(out.final_state, delta, cfg.h, cfg.tol, &out.diag);
    } catch (const Error& e) {
      throw Error(ErrorCode::NonFiniteState,
                  "step " + std::to_string(step) + ": " + e.what());
    }
    require(finite_state(out.final_state), ErrorCode::NonFiniteState,
            "state became non-finite at step " + std::to_string(step));
    ++out.diag.invariant_checks;
    if (!check_invariants(out.final_state, cfg.tol)) ++out.diag.invariant_violations;
    if (step % cfg.record_every == 0 || step == n) record(step);
  }
  return out;
}

}  // namespace lrdiag
