#include "lrdiag/riccati.hpp"

#include <Eigen/Eigenvalues>

namespace lrdiag {

namespace {

Mat solve_right(const Mat& X, const SpdSmall& R) { return R.llt().solve(X.transpose()).transpose(); }

Mat sym(const Mat& M) { return 0.5 * (M + M.transpose()); }

}  // namespace

// ---------------------------------------------------------------- LinOpA

LinOpA LinOpA::outer(Mat Ua, Mat Va) {
  require(Ua.rows() == Va.rows() && Ua.cols() == Va.cols(), ErrorCode::DimensionMismatch,
          "drift factors differ in shape");
  return LinOpA(Outer{std::move(Ua), std::move(Va)});
}

Index LinOpA::dim() const {
  return std::visit(
      [](const auto& f) -> Index {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Zero>) return f.d;
        else if constexpr (std::is_same_v<T, Diagonal>) return f.a.size();
        else return f.Ua.rows();
      },
      form_);
}

Mat LinOpA::apply(const Mat& X) const {
  require(X.rows() == dim(), ErrorCode::DimensionMismatch, "operand row count differs from d");
  return std::visit(
      [&](const auto& f) -> Mat {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Zero>) return Mat::Zero(X.rows(), X.cols());
        else if constexpr (std::is_same_v<T, Diagonal>) return X.array().colwise() * f.a.array();
        else return f.Ua * (f.Va.transpose() * X);
      },
      form_);
}

Mat LinOpA::apply_t(const Mat& X) const {
  require(X.rows() == dim(), ErrorCode::DimensionMismatch, "operand row count differs from d");
  return std::visit(
      [&](const auto& f) -> Mat {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Zero>) return Mat::Zero(X.rows(), X.cols());
        else if constexpr (std::is_same_v<T, Diagonal>) return X.array().colwise() * f.a.array();
        else return f.Va * (f.Ua.transpose() * X);
      },
      form_);
}

Vec LinOpA::diagonal() const {
  return std::visit(
      [](const auto& f) -> Vec {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Zero>) return Vec::Zero(f.d);
        else if constexpr (std::is_same_v<T, Diagonal>) return f.a;
        else return f.Ua.cwiseProduct(f.Va).rowwise().sum();
      },
      form_);
}

double LinOpA::trace() const { return is_zero() ? 0.0 : diagonal().sum(); }

Mat LinOpA::densify(const Tolerances& tol) const {
  const Index d = dim();
  require(static_cast<std::size_t>(d) <= tol.max_dense, ErrorCode::TooLargeToDensify, "d = " + std::to_string(d));
  return apply(Mat::Identity(d, d));
}

// ---------------------------------------------------------------- params

RiccatiParams::RiccatiParams(LinOpA A, SymOp Q, SparseMat C, const Mat& N)
    : A_(std::move(A)), Q_(std::move(Q)), C_(std::move(C)), N_(N) {
  require(N_.rows() == C_.rows() && N_.cols() == C_.rows(), ErrorCode::DimensionMismatch,
          "N must be k x k with k the row count of C");
  require((N_ - N_.transpose()).norm() <= 1e-12 * std::max(1.0, N_.norm()), ErrorCode::NotPd,
          "N is not symmetric");
  if (N_.rows() > 0) {
    n_llt_.compute(N_);
    require(n_llt_.info() == Eigen::Success, ErrorCode::NotPd, "N is not positive definite");
  }
  finish();
}

RiccatiParams::RiccatiParams(LinOpA A, SymOp Q, SparseMat C, const Vec& n_diag)
    : A_(std::move(A)), Q_(std::move(Q)), C_(std::move(C)), n_diag_(n_diag) {
  require(n_diag_.size() == C_.rows(), ErrorCode::DimensionMismatch,
          "N diagonal length differs from the row count of C");
  require(n_diag_.size() == 0 || n_diag_.minCoeff() > 0.0, ErrorCode::NotPd, "N is not positive definite");
  finish();
}

void RiccatiParams::finish() {
  const Index d = A_.dim();
  require(Q_.dim() == d && C_.cols() == d, ErrorCode::DimensionMismatch, "A, Q and C differ in dimension");
  for (const auto& t : Q_.terms())
    require(t.alpha >= 0.0, ErrorCode::ValidationError, "Q has a negative outer-product term");
  if (Q_.diag_term())
    require(Q_.diag_term()->minCoeff() >= 0.0, ErrorCode::ValidationError, "Q has a negative diagonal entry");
  diag_s_ = Vec::Zero(d);
  if (C_.rows() == 0) return;
  if (n_diag_.size() > 0) {
    for (Index r = 0; r < C_.outerSize(); ++r)
      for (SparseMat::InnerIterator it(C_, r); it; ++it) diag_s_[it.col()] += it.value() * it.value() / n_diag_[r];
  } else {
    // diag(C^T N^{-1} C) = column norms of L^{-1} C with N = L L^T.
    const Mat Z = n_llt_.matrixL().solve(Mat(C_));
    diag_s_ = Z.colwise().squaredNorm().transpose();
  }
}

Mat RiccatiParams::N() const { return n_diag_.size() > 0 || C_.rows() == 0 ? Mat(n_diag_.asDiagonal()) : N_; }

Mat RiccatiParams::solve_N(const Mat& V) const {
  if (C_.rows() == 0) return V;
  if (n_diag_.size() > 0) return V.array().colwise() / n_diag_.array();
  return n_llt_.solve(V);
}

Mat RiccatiParams::apply_S(const Mat& X) const {
  if (C_.rows() == 0) return Mat::Zero(X.rows(), X.cols());
  const Mat CX = C_ * X;
  return C_.transpose() * solve_N(CX);
}

Mat RiccatiParams::quad_S(const Mat& X) const {
  if (C_.rows() == 0) return Mat::Zero(X.cols(), X.cols());
  const Mat CX = C_ * X;
  return sym(CX.transpose() * solve_N(CX));
}

Mat RiccatiParams::dense_S(const Tolerances& tol) const {
  const Index d = dim();
  require(static_cast<std::size_t>(d) <= tol.max_dense, ErrorCode::TooLargeToDensify, "d = " + std::to_string(d));
  return sym(apply_S(Mat::Identity(d, d)));
}

SparseMat sparse_identity(Index d) {
  SparseMat I(d, d);
  I.setIdentity();
  return I;
}

RiccatiParams brownian_params(Index d, double lambda, double nu) {
  return RiccatiParams(LinOpA::zero(d), SymOp::diagonal(Vec::Constant(d, lambda)), sparse_identity(d),
                       Vec(Vec::Constant(d, nu)));
}

// ---------------------------------------------------------------- dense oracle

Mat dense_riccati_rhs(const Mat& P, const RiccatiParams& params, const Tolerances& tol) {
  const Index d = params.dim();
  require(P.rows() == d && P.cols() == d, ErrorCode::DimensionMismatch, "P must be d x d");
  require(static_cast<std::size_t>(d) <= tol.max_dense, ErrorCode::TooLargeToDensify, "d = " + std::to_string(d));
  const Mat AP = params.A().apply(P);
  Mat out = AP + AP.transpose() + params.Q().densify(tol);
  out.noalias() -= P * params.apply_S(P);
  return sym(out);
}

Mat rk4_step(const std::function<Mat(const Mat&)>& f, const Mat& X, double h) {
  const Mat k1 = f(X);
  const Mat k2 = f(X + 0.5 * h * k1);
  const Mat k3 = f(X + 0.5 * h * k2);
  const Mat k4 = f(X + h * k3);
  return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

DenseTrajectory integrate_dense_riccati(const Mat& P0, const RiccatiParams& params, const IntegratorConfig& cfg) {
  validate(cfg);
  const auto f = [&](const Mat& P) { return dense_riccati_rhs(P, params, cfg.tol); };
  DenseTrajectory out;
  Mat P = sym(P0);
  auto record = [&](Index step) {
    out.times.push_back(static_cast<double>(step) * cfg.h);
    out.states.push_back(P);
    const double lo = Eigen::SelfAdjointEigenSolver<Mat>(P, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    out.min_eigenvalue = out.states.size() == 1 ? lo : std::min(out.min_eigenvalue, lo);
  };
  record(0);
  const Index n = cfg.steps();
  for (Index step = 1; step <= n; ++step) {
    P = sym(rk4_step(f, P, cfg.h));
    require(P.allFinite(), ErrorCode::NonFiniteState, "dense Riccati state non-finite at step " + std::to_string(step));
    if (step % cfg.record_every == 0 || step == n) record(step);
  }
  return out;
}

// ---------------------------------------------------------------- factored fields

namespace {

// U^T A U R + R U^T A^T U + U^T Q U - R U^T S U R: the in-span block shared
// by all three variants.
Mat span_block(const Mat& UtAU, const Mat& R, const Mat& UtQU, const Mat& UtSU) {
  return UtAU * R + R * UtAU.transpose() + UtQU - R * UtSU * R;
}

}  // namespace

TangentDelta lowrank_riccati_delta(const Stiefel& U, const SpdSmall& R, const RiccatiParams& params) {
  const Mat& u = U.matrix();
  require(U.dim() == params.dim(), ErrorCode::DimensionMismatch, "U and parameters differ in dimension");
  const Mat AU = params.A().apply(u);
  const Mat QU = params.Q().mul_tall(u);
  const Mat UtAU = u.transpose() * AU;
  const Mat UtQU = sym(u.transpose() * QU);
  Mat dU = detail::project_out(u, AU + solve_right(QU, R));
  const Mat dR = span_block(UtAU, R.matrix(), UtQU, params.quad_S(u));
  return {std::move(dU), SymSmall(dR), std::monostate{}};
}

TangentDelta ppca_riccati_delta(const Stiefel& U, const SpdSmall& R, double s, const RiccatiParams& params,
                                const Tolerances& tol, Diagnostics* diag) {
  const Mat& u = U.matrix();
  require(U.dim() == params.dim(), ErrorCode::DimensionMismatch, "U and parameters differ in dimension");
  const Index d = U.dim(), p = U.rank();
  const Mat& Rm = R.matrix();
  const Mat AU = params.A().apply(u);
  const Mat AtU = params.A().apply_t(u);
  const Mat QU = params.Q().mul_tall(u);
  const Mat SU = params.apply_S(u);
  const Mat UtAU = u.transpose() * AU;
  const Mat UtQU = sym(u.transpose() * QU);
  const Mat UtSU = sym(u.transpose() * SU);

  // (I-UU^T)(A U R + Q U + s A^T U - s S U R)(R - sI)^{-1}
  const Mat X = AU * Rm + QU + s * AtU - s * (SU * Rm);
  Mat dU = detail::solve_shifted_right(detail::project_out(u, X), Rm, s, tol, diag);
  const Mat dR = span_block(UtAU, Rm, UtQU, UtSU);
  // Tr((I-UU^T)(2sA + Q - s^2 S)) / (d - p)
  const double tr_perp = 2.0 * s * (params.A().trace() - UtAU.trace()) +
                         (params.Q().diag_and_trace().trace - UtQU.trace()) -
                         s * s * (params.trace_S() - UtSU.trace());
  const double ds = tr_perp / static_cast<double>(d - p);
  return {std::move(dU), SymSmall(dR), ds};
}

TangentDelta fa_riccati_delta(const Stiefel& U, const SpdSmall& R, const DiagPos& psi,
                              const RiccatiParams& params, const Tolerances& tol, Diagnostics* diag) {
  const Mat& u = U.matrix();
  require(U.dim() == params.dim() && psi.size() == U.dim(), ErrorCode::DimensionMismatch,
          "U, psi and parameters differ in dimension");
  const Mat& Rm = R.matrix();
  const Vec& ps = psi.values();
  const Mat psiU = u.array().colwise() * ps.array();

  // M = A psi + psi A^T + Q - psi S psi, reached through M U and diag(M).
  const Mat AU = params.A().apply(u);
  const Mat SU = params.apply_S(u);
  Mat MU = params.A().apply(psiU);
  MU.array() += params.A().apply_t(u).array().colwise() * ps.array();
  MU.noalias() += params.Q().mul_tall(u);
  MU.array() -= params.apply_S(psiU).array().colwise() * ps.array();
  const Vec diagM = 2.0 * params.A().diagonal().cwiseProduct(ps) + params.Q().diag_and_trace().diag -
                    ps.cwiseProduct(ps).cwiseProduct(params.diag_S());
  const Mat UtMU = sym(u.transpose() * MU);

  // Only M reaches the complement block: the remaining terms of F(Y) carry U
  // on one side, so diag((I-UU^T) F(Y) (I-UU^T)) = diag((I-UU^T) M (I-UU^T)).
  const Vec b = detail::fa_normal_rhs(diagM, MU, UtMU, u, nullptr);
  Vec x = detail::fa_diagonal_solve_auto(u, b, tol, diag, nullptr);

  Mat MtU = MU;
  MtU.array() -= u.array().colwise() * x.array();
  const Mat psiSU = SU.array().colwise() * ps.array();
  Mat dU = detail::project_out(u, solve_right(MtU, R) + AU - psiSU);

  const Mat UtAU = u.transpose() * AU;
  const Mat K = u.transpose() * psiSU;  // U^T psi S U
  const Mat dR = u.transpose() * MtU + UtAU * Rm + Rm * UtAU.transpose() - Rm * K.transpose() - K * Rm -
                 Rm * params.quad_S(u) * Rm;
  return {std::move(dU), SymSmall(dR), std::move(x)};
}

TangentDelta riccati_delta(const FactoredPsd& Y, const RiccatiParams& params, const Tolerances& tol,
                           Diagnostics* diag) {
  switch (Y.kind()) {
    case Kind::LowRank: return lowrank_riccati_delta(Y.U(), Y.R(), params);
    case Kind::Ppca: return ppca_riccati_delta(Y.U(), Y.R(), Y.s(), params, tol, diag);
    case Kind::Fa: return fa_riccati_delta(Y.U(), Y.R(), Y.psi(), params, tol, diag);
  }
  throw Error(ErrorCode::MismatchedVariant, "unknown kind");
}

}  // namespace lrdiag
