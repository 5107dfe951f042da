#include "lrdiag/viflow.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

namespace lrdiag {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Mat sym(const Mat& M) { return 0.5 * (M + M.transpose()); }

}  // namespace

Index TargetPotential::dim() const { return m ? m->size() : -1; }

TargetPotential TargetPotential::gaussian(Vec m, Mat M, double epsilon) {
  require(M.rows() == m.size() && M.cols() == m.size(), ErrorCode::DimensionMismatch, "M must be d x d");
  require(epsilon > 0.0, ErrorCode::ValidationError, "epsilon must be positive");
  const Eigen::LLT<Mat> llt(M);
  require(llt.info() == Eigen::Success, ErrorCode::NotPd, "M is not positive definite");
  TargetPotential t;
  t.epsilon = epsilon;
  t.m = m;
  t.M = M;
  const Mat Minv = llt.solve(Mat::Identity(M.rows(), M.cols()));
  t.grad_v = [Minv, m](const Vec& x) -> Vec { return Minv * (x - m); };
  return t;
}

TargetPotential TargetPotential::flat(Index d, double epsilon) {
  require(epsilon > 0.0, ErrorCode::ValidationError, "epsilon must be positive");
  TargetPotential t;
  t.epsilon = epsilon;
  t.grad_v = [d](const Vec&) -> Vec { return Vec::Zero(d); };
  return t;
}

SteinFactors stein_factors(const TargetPotential& potential, const Vec& mu, const Mat& samples) {
  const Index K = samples.cols();
  require(K >= 1, ErrorCode::EmptySampleSet, "no samples");
  require(samples.rows() == mu.size(), ErrorCode::DimensionMismatch, "samples and mean differ in dimension");
  const double scale = 1.0 / std::sqrt(static_cast<double>(K));
  SteinFactors f;
  f.K = K;
  f.D.resize(mu.size(), K);
  for (Index k = 0; k < K; ++k) {
    const Vec g = potential.grad_v(samples.col(k));
    require(g.size() == mu.size() && g.allFinite(), ErrorCode::NonFiniteState,
            "gradient callback returned a bad vector");
    f.D.col(k) = scale * g;
  }
  f.B = scale * (samples.colwise() - mu);
  return f;
}

TangentDelta vi_ppca_delta(const Stiefel& U, const SpdSmall& R, double s, const SteinFactors& f, double epsilon,
                           const Tolerances& tol, Diagnostics* diag) {
  const Mat& u = U.matrix();
  const Index d = U.dim(), p = U.rank();
  require(f.D.rows() == d && f.B.rows() == d, ErrorCode::DimensionMismatch, "factors and U differ in dimension");
  const Mat UtD = u.transpose() * f.D;  // p x K
  const Mat UtB = u.transpose() * f.B;
  // H U with H = 2 eps I - D B^T - B D^T
  Mat HU = 2.0 * epsilon * u;
  HU.noalias() -= f.D * UtB.transpose();
  HU.noalias() -= f.B * UtD.transpose();
  const Mat cross = UtD * UtB.transpose();
  const Mat UtHU = 2.0 * epsilon * Mat::Identity(p, p) - cross - cross.transpose();
  // Tr D B^T = sum_i D[i,:] . B[i,:]
  const double tr_db = f.D.cwiseProduct(f.B).sum();
  const double ds = (2.0 * epsilon * static_cast<double>(d - p) - 2.0 * (tr_db - cross.trace())) /
                    static_cast<double>(d - p);
  Mat dU = detail::solve_shifted_right(detail::project_out(u, HU), R.matrix(), s, tol, diag);
  return {std::move(dU), SymSmall(UtHU), ds};
}

TangentDelta vi_generic_delta(const FactoredPsd& Y, const SteinFactors& f, double epsilon, const Tolerances& tol,
                              Diagnostics* diag) {
  Tolerances wide = tol;
  wide.max_width = std::max<std::size_t>(tol.max_width, static_cast<std::size_t>(3 * f.K));
  const SymOp H = add(SymOp::symmetric_product(-1.0, f.D, f.B, wide),
                      SymOp::diagonal(Vec::Constant(Y.dim(), 2.0 * epsilon)), wide);
  return project(H, Y, tol, diag);
}

double max_principal_angle(const Mat& A, const Mat& B) {
  const Eigen::JacobiSVD<Mat> svd(A.transpose() * B);
  const double smin = svd.singularValues().minCoeff();
  return std::acos(std::clamp(smin, -1.0, 1.0));
}

Mat top_eigenspace(const Mat& M, Index p) {
  const Eigen::SelfAdjointEigenSolver<Mat> eig(sym(M));
  return eig.eigenvectors().rightCols(p);
}

VIRun vi_run(const TargetPotential& potential, const Vec& mu0, const FactoredPsd& Y0, const VIConfig& cfg, Rng& rng) {
  validate(cfg.integ);
  const Index d = Y0.dim(), p = Y0.rank();
  const double eps = potential.epsilon;
  require(mu0.size() == d, ErrorCode::DimensionMismatch, "initial mean and covariance differ in dimension");
  require(cfg.K >= 1, ErrorCode::ValidationError, "K must be at least 1");
  const auto& tol = cfg.integ.tol;
  const bool exact = cfg.mode == Expectation::ExactGaussian;
  require(!exact || potential.is_gaussian(), ErrorCode::ValidationError, "exact mode needs a Gaussian target");
  require(!exact || Y0.kind() == Kind::Ppca, ErrorCode::ValidationError, "exact mode runs the PPCA form");
  require(Y0.kind() != Kind::LowRank, ErrorCode::ValidationError, "VI flow needs a PPCA or FA covariance");

  Mat top;
  Mat target_cov;
  std::optional<RiccatiParams> exact_params;
  Mat Minv;
  if (potential.is_gaussian()) {
    require(potential.m->size() == d, ErrorCode::DimensionMismatch, "target and state differ in dimension");
    top = top_eigenspace(*potential.M, p);
    if (static_cast<std::size_t>(d) <= tol.max_dense) target_cov = eps * *potential.M;
    Minv = Eigen::LLT<Mat>(*potential.M).solve(Mat::Identity(d, d));
    if (exact)
      exact_params.emplace(LinOpA::outer(-Minv, Mat::Identity(d, d)), SymOp::diagonal(Vec::Constant(d, 2.0 * eps)),
                           SparseMat(0, d), Vec());
  }

  VIRun run{{}, mu0, Y0, {}};
  auto record = [&](Index step) {
    VIRow row{static_cast<double>(step) * cfg.integ.h, kNaN, 0.0, kNaN, kNaN};
    row.s = run.cov.kind() == Kind::Ppca ? run.cov.s() : run.cov.psi().values().mean();
    if (potential.is_gaussian()) {
      row.mu_err = (run.mu - *potential.m).norm();
      row.angle = max_principal_angle(run.cov.U().matrix(), top);
      if (target_cov.size() > 0) row.cov_err = (densify(run.cov, tol) - target_cov).norm() / target_cov.norm();
    }
    run.rows.push_back(row);
  };
  record(0);
  const Index n = cfg.integ.steps();
  for (Index step = 1; step <= n; ++step) {
    TangentDelta delta;
    Vec grad_mean;
    if (exact) {
      grad_mean = Minv * (run.mu - *potential.m);
      delta = riccati_delta(run.cov, *exact_params, tol, &run.diag);
    } else {
      // Fresh samples each step; the mean and covariance share the batch.
      const Mat X = run.cov.kind() == Kind::Ppca ? sample_ppca_gaussian(run.mu, run.cov, cfg.K, rng)
                                                 : sample_gaussian(run.mu, run.cov, cfg.K, rng);
      const SteinFactors f = stein_factors(potential, run.mu, X);
      grad_mean = f.D.rowwise().sum() / std::sqrt(static_cast<double>(cfg.K));
      delta = run.cov.kind() == Kind::Ppca
                  ? vi_ppca_delta(run.cov.U(), run.cov.R(), run.cov.s(), f, eps, tol, &run.diag)
                  : vi_generic_delta(run.cov, f, eps, tol, &run.diag);
    }
    run.mu -= cfg.integ.h * grad_mean;
    try {
      run.cov = retract(run.cov, delta, cfg.integ.h, tol, &run.diag);
    } catch (const Error& e) {
      throw Error(ErrorCode::NonFiniteState, "step " + std::to_string(step) + ": " + e.what());
    }
    require(run.mu.allFinite(), ErrorCode::NonFiniteState, "mean became non-finite at step " + std::to_string(step));
    ++run.diag.invariant_checks;
    if (!check_invariants(run.cov, tol)) ++run.diag.invariant_violations;
    if (step % cfg.integ.record_every == 0 || step == n) record(step);
  }
  return run;
}

GaussianTrajectory gaussian_target_reference(const Vec& m, const Mat& M, double epsilon, const Vec& mu0,
                                             const Mat& P0, const IntegratorConfig& cfg) {
  validate(cfg);
  const Index d = m.size();
  require(static_cast<std::size_t>(d) <= cfg.tol.max_dense, ErrorCode::TooLargeToDensify, "d = " + std::to_string(d));
  require(M.rows() == d && M.cols() == d && mu0.size() == d && P0.rows() == d && P0.cols() == d,
          ErrorCode::DimensionMismatch, "target and initial state differ in dimension");
  const Eigen::LLT<Mat> llt(M);
  require(llt.info() == Eigen::Success, ErrorCode::NotPd, "M is not positive definite");
  const Mat Minv = llt.solve(Mat::Identity(d, d));
  // State packed as [mu | P] (d x (d + 1)).
  const auto f = [&](const Mat& S) {
    Mat out(d, d + 1);
    out.col(0) = -Minv * (S.col(0) - m);
    const Mat P = S.rightCols(d);
    out.rightCols(d) = 2.0 * epsilon * Mat::Identity(d, d) - Minv * P - P * Minv;
    return out;
  };
  Mat S(d, d + 1);
  S.col(0) = mu0;
  S.rightCols(d) = sym(P0);
  GaussianTrajectory out;
  auto record = [&](Index step) {
    out.times.push_back(static_cast<double>(step) * cfg.h);
    out.mu.push_back(S.col(0));
    out.P.push_back(S.rightCols(d));
  };
  record(0);
  const Index n = cfg.steps();
  for (Index step = 1; step <= n; ++step) {
    S = rk4_step(f, S, cfg.h);
    S.rightCols(d) = sym(S.rightCols(d));
    if (step % cfg.record_every == 0 || step == n) record(step);
  }
  return out;
}

}  // namespace lrdiag
