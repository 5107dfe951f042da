#include "lrdiag/projection.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "lrdiag/kernels.hpp"

namespace lrdiag {

namespace {

constexpr Index kRowBlock = 256;

Mat solve_right_spd(const Mat& X, const SpdSmall& R) {
  return R.llt().solve(X.transpose()).transpose();
}

// Index pairs of the columns of Upsilon: sqrt(2) U_i o U_j for i < j, then U_i o U_i.
struct PairIndex {
  std::vector<std::pair<Index, Index>> pairs;
  explicit PairIndex(Index p) {
    for (Index i = 0; i < p; ++i)
      for (Index j = i + 1; j < p; ++j) pairs.emplace_back(i, j);
    for (Index i = 0; i < p; ++i) pairs.emplace_back(i, i);
  }
  Index size() const { return static_cast<Index>(pairs.size()); }
};

// Fills rows [r0, r0 + n) of Upsilon into blk (n x m, column-major).
void upsilon_block(const Mat& U, const PairIndex& idx, Index r0, Index n, Mat& blk) {
  const auto& k = kernels::active();
  blk.resize(n, idx.size());
  for (Index c = 0; c < idx.size(); ++c) {
    const auto [i, j] = idx.pairs[static_cast<std::size_t>(c)];
    k.hadamard(blk.col(c).data(), U.col(i).data() + r0, U.col(j).data() + r0,
               static_cast<std::size_t>(n));
    if (i != j) blk.col(c) *= std::sqrt(2.0);
  }
}

// y = (I - 2 Dbar + Upsilon Upsilon^T + ridge I) v, matrix-free.
Vec fa_normal_apply(const Mat& U, const PairIndex& idx, const Vec& dbar, double ridge, const Vec& v) {
  const Index d = U.rows();
  const auto& k = kernels::active();
  Vec t = Vec::Zero(idx.size());
  Mat blk;
  for (Index r0 = 0; r0 < d; r0 += kRowBlock) {
    const Index n = std::min(kRowBlock, d - r0);
    upsilon_block(U, idx, r0, n, blk);
    for (Index c = 0; c < idx.size(); ++c)
      t[c] += k.dot(blk.col(c).data(), v.data() + r0, static_cast<std::size_t>(n));
  }
  Vec y = v.array() * (1.0 + ridge - 2.0 * dbar.array());
  for (Index r0 = 0; r0 < d; r0 += kRowBlock) {
    const Index n = std::min(kRowBlock, d - r0);
    upsilon_block(U, idx, r0, n, blk);
    y.segment(r0, n).noalias() += blk * t;
  }
  return y;
}

// Ridge-regularized fallback: Jacobi-preconditioned conjugate gradients on the
// positive definite system (I-UU^T)^{o2} + ridge I.
Vec fa_ridge_solve(const Mat& U, const PairIndex& idx, const Vec& dbar, const Vec& b, double ridge) {
  const Index d = U.rows();
  const Vec precond = ((1.0 - dbar.array()).square() + ridge).max(1e-3).inverse();
  Vec x = Vec::Zero(d);
  Vec r = b;
  Vec z = precond.cwiseProduct(r);
  Vec q = z;
  double rz = r.dot(z);
  const double bnorm = b.norm();
  const Index max_iter = std::min<Index>(4 * d + 100, 20000);
  for (Index it = 0; it < max_iter && r.norm() > 1e-14 * bnorm; ++it) {
    const Vec Aq = fa_normal_apply(U, idx, dbar, ridge, q);
    const double alpha = rz / q.dot(Aq);
    x += alpha * q;
    r -= alpha * Aq;
    z = precond.cwiseProduct(r);
    const double rz_next = r.dot(z);
    q = z + (rz_next / rz) * q;
    rz = rz_next;
  }
  return x;
}

}  // namespace

// ---------------------------------------------------------------- TangentDelta

double TangentDelta::ds() const {
  const double* v = std::get_if<double>(&diag_part);
  require(v != nullptr, ErrorCode::MismatchedVariant, "delta has no ds component");
  return *v;
}

const Vec& TangentDelta::dpsi() const {
  const Vec* v = std::get_if<Vec>(&diag_part);
  require(v != nullptr, ErrorCode::MismatchedVariant, "delta has no dpsi component");
  return *v;
}

TangentDelta TangentDelta::zero(const FactoredPsd& base) {
  const Index d = base.dim(), p = base.rank();
  TangentDelta out{Mat::Zero(d, p), SymSmall(Mat::Zero(p, p)), std::monostate{}};
  if (base.kind() == Kind::Ppca) out.diag_part = 0.0;
  if (base.kind() == Kind::Fa) out.diag_part = Vec(Vec::Zero(d));
  return out;
}

// ---------------------------------------------------------------- helpers

namespace detail {

Mat project_out(const Mat& U, const Mat& X) {
  Mat out = X;
  out.noalias() -= U * (U.transpose() * X);
  return out;
}

Mat solve_shifted_right(const Mat& X, const Mat& R, double s, const Tolerances& tol, Diagnostics* diag) {
  const Index p = R.rows();
  Eigen::SelfAdjointEigenSolver<Mat> eig(R - s * Mat::Identity(p, p));
  const Vec& lam = eig.eigenvalues();
  const double rnorm = (R.selfadjointView<Eigen::Lower>().eigenvalues().cwiseAbs()).maxCoeff();
  const double floor = tol.sing * rnorm;
  Vec inv(p);
  if (lam.cwiseAbs().minCoeff() < floor) {
    if (diag) ++diag->near_singular_rs;
    inv = lam.array() / (lam.array().square() + floor * floor);
  } else {
    inv = lam.cwiseInverse();
  }
  const Mat& V = eig.eigenvectors();
  return X * (V * inv.asDiagonal() * V.transpose());
}

Vec row_dots(const Mat& A, const Mat& B) {
  const auto& k = kernels::active();
  Vec out = Vec::Zero(A.rows());
  const auto n = static_cast<std::size_t>(A.rows());
  for (Index j = 0; j < A.cols(); ++j) k.mul_accum(out.data(), A.col(j).data(), B.col(j).data(), 1.0, n);
  return out;
}

Vec fa_normal_rhs(const Vec& hbar, const Mat& HU, const Mat& UtHU, const Mat& U, FaSolverWorkspace* ws) {
  Vec hbar_u = row_dots(U, HU);
  Vec lambda = row_dots(U, U * UtHU);
  Vec b = hbar - 2.0 * hbar_u + lambda;
  if (ws) {
    ws->hbar = hbar;
    ws->hbar_u = std::move(hbar_u);
    ws->lambda = std::move(lambda);
  }
  return b;
}

Vec fa_diagonal_solve(const Mat& U, const Vec& b, const Tolerances& tol, Diagnostics* diag,
                      FaSolverWorkspace* ws) {
  const Index d = U.rows(), p = U.cols();
  const auto& k = kernels::active();
  const auto nd = static_cast<std::size_t>(d);
  const PairIndex idx(p);
  const Index m = idx.size();

  Vec dbar = Vec::Zero(d);
  for (Index j = 0; j < p; ++j) k.sq_accum(dbar.data(), U.col(j).data(), 1.0, nd);

  FaSolverWorkspace local;
  FaSolverWorkspace& w = ws ? *ws : local;
  w.dbar = dbar;
  w.regularized = false;
  if (b.norm() == 0.0) {
    w.gram = Mat::Zero(m, m);
    w.rhs_small = Vec::Zero(m);
    return Vec::Zero(d);
  }

  const Vec one_minus = 1.0 - 2.0 * dbar.array();
  const bool phi_ok = one_minus.cwiseAbs().minCoeff() >= tol.phi;
  if (!phi_ok && diag) ++diag->ill_conditioned_phi;

  Vec x;
  if (phi_ok) {
    const Vec phi = one_minus.cwiseInverse();
    const Vec phib = phi.cwiseProduct(b);
    Mat gram = Mat::Zero(m, m);
    Vec t = Vec::Zero(m);
    Mat blk;
    for (Index r0 = 0; r0 < d; r0 += kRowBlock) {
      const Index n = std::min(kRowBlock, d - r0);
      const auto nn = static_cast<std::size_t>(n);
      upsilon_block(U, idx, r0, n, blk);
      for (Index a = 0; a < m; ++a) {
        const double* ya = blk.col(a).data();
        t[a] += k.dot(ya, phib.data() + r0, nn);
        for (Index c = a; c < m; ++c) gram(a, c) += k.wdot(phi.data() + r0, ya, blk.col(c).data(), nn);
      }
    }
    gram = Mat(gram.selfadjointView<Eigen::Upper>());
    w.gram = gram;
    w.rhs_small = t;

    Mat cap = gram;
    cap.diagonal().array() += 1.0;
    const Eigen::FullPivLU<Mat> lu(cap);
    if (lu.isInvertible()) {
      const Vec y = lu.solve(t);
      // x = phi o (b - Upsilon y)
      x = b;
      for (Index r0 = 0; r0 < d; r0 += kRowBlock) {
        const Index n = std::min(kRowBlock, d - r0);
        upsilon_block(U, idx, r0, n, blk);
        x.segment(r0, n).noalias() -= blk * y;
      }
      x.array() *= phi.array();
      const Vec resid = fa_normal_apply(U, idx, dbar, 0.0, x) - b;
      if (!x.allFinite() || resid.norm() > tol.fa_residual * b.norm()) x.resize(0);
    }
  }

  if (x.size() == 0) {
    if (diag) ++diag->fa_regularized;
    w.regularized = true;
    x = fa_ridge_solve(U, idx, dbar, b, tol.fa_ridge);
    // Iterative refinement against the unregularized operator removes the
    // ridge bias on small nonzero eigenvalues; residuals of the consistent
    // system stay in its range, so no null-space mass is introduced.
    for (int pass = 0; pass < 4; ++pass) {
      const Vec r = b - fa_normal_apply(U, idx, dbar, 0.0, x);
      if (r.norm() <= tol.fa_residual * 1e-3 * b.norm()) break;
      x += fa_ridge_solve(U, idx, dbar, r, tol.fa_ridge);
    }
  }
  return x;
}

Vec fa_diagonal_solve_dense(const Mat& U, const Vec& b, const Tolerances& tol) {
  const Index d = U.rows();
  require(static_cast<std::size_t>(d) <= tol.max_dense, ErrorCode::TooLargeToDensify, "d = " + std::to_string(d));
  const Mat Pperp = Mat::Identity(d, d) - U * U.transpose();
  const Eigen::SelfAdjointEigenSolver<Mat> eig(Pperp.cwiseProduct(Pperp));
  const Vec& lam = eig.eigenvalues();
  const double cutoff = tol.pinv_cutoff * lam.cwiseAbs().maxCoeff();
  Vec inv(d);
  for (Index i = 0; i < d; ++i) inv[i] = std::abs(lam[i]) > cutoff ? 1.0 / lam[i] : 0.0;
  const Mat& V = eig.eigenvectors();
  return V * inv.asDiagonal() * (V.transpose() * b);
}

bool fa_prefers_dense(Index d, Index p, const Tolerances& tol) {
  return p * (p + 1) / 2 > d && static_cast<std::size_t>(d) <= tol.max_dense;
}

Vec fa_diagonal_solve_auto(const Mat& U, const Vec& b, const Tolerances& tol, Diagnostics* diag,
                           FaSolverWorkspace* ws) {
  if (fa_prefers_dense(U.rows(), U.cols(), tol)) return fa_diagonal_solve_dense(U, b, tol);
  return fa_diagonal_solve(U, b, tol, diag, ws);
}

}  // namespace detail

// ---------------------------------------------------------------- projectors

TangentDelta project_low_rank(const SymOp& H, const Stiefel& U, const SpdSmall& R) {
  const Mat& u = U.matrix();
  require(H.dim() == U.dim(), ErrorCode::DimensionMismatch, "H and U differ in dimension");
  const Mat HU = H.mul_tall(u);
  Mat UtHU = u.transpose() * HU;
  Mat dU = solve_right_spd(detail::project_out(u, HU), R);
  return {std::move(dU), SymSmall(UtHU), std::monostate{}};
}

TangentDelta project_ppca(const SymOp& H, const Stiefel& U, const SpdSmall& R, double s,
                          const Tolerances& tol, Diagnostics* diag) {
  const Mat& u = U.matrix();
  require(H.dim() == U.dim(), ErrorCode::DimensionMismatch, "H and U differ in dimension");
  const Index d = U.dim(), p = U.rank();
  const Mat HU = H.mul_tall(u);
  const Mat UtHU = u.transpose() * HU;
  const double ds = (H.diag_and_trace().trace - UtHU.trace()) / static_cast<double>(d - p);
  Mat dU = detail::solve_shifted_right(detail::project_out(u, HU), R.matrix(), s, tol, diag);
  return {std::move(dU), SymSmall(UtHU), ds};
}

TangentDelta project_fa_dense(const SymOp& H, const Stiefel& U, const SpdSmall& R, const DiagPos& psi,
                              const Tolerances& tol, Diagnostics* /*diag*/) {
  const Mat& u = U.matrix();
  const Index d = U.dim();
  require(H.dim() == d && psi.size() == d, ErrorCode::DimensionMismatch, "H, U and psi differ in dimension");
  const Mat Hd = H.densify(tol);
  const Mat Pperp = Mat::Identity(d, d) - u * u.transpose();
  const Vec b = (Pperp * Hd * Pperp).diagonal();
  Vec x = detail::fa_diagonal_solve_dense(u, b, tol);

  Mat Ht = Hd;
  Ht.diagonal() -= x;
  const Mat HtU = Ht * u;
  Mat dR = u.transpose() * HtU;
  Mat dU = solve_right_spd(Pperp * HtU, R);
  return {std::move(dU), SymSmall(dR), std::move(x)};
}

namespace {

TangentDelta fa_project(const SymOp& H, const Stiefel& U, const SpdSmall& R, const DiagPos& psi,
                        const Tolerances& tol, Diagnostics* diag, FaSolverWorkspace* ws, bool allow_dense) {
  const Mat& u = U.matrix();
  require(H.dim() == U.dim() && psi.size() == U.dim(), ErrorCode::DimensionMismatch,
          "H, U and psi differ in dimension");
  const Mat HU = H.mul_tall(u);
  const Mat UtHU = u.transpose() * HU;
  const Vec b = detail::fa_normal_rhs(H.diag_and_trace().diag, HU, UtHU, u, ws);
  Vec x = allow_dense ? detail::fa_diagonal_solve_auto(u, b, tol, diag, ws)
                      : detail::fa_diagonal_solve(u, b, tol, diag, ws);

  // (H - diag(x)) U
  Mat HtU = HU;
  HtU.array() -= u.array().colwise() * x.array();
  Mat dR = u.transpose() * HtU;
  Mat dU = solve_right_spd(detail::project_out(u, HtU), R);
  return {std::move(dU), SymSmall(dR), std::move(x)};
}

}  // namespace

TangentDelta project_fa_fast(const SymOp& H, const Stiefel& U, const SpdSmall& R, const DiagPos& psi,
                             const Tolerances& tol, Diagnostics* diag, FaSolverWorkspace* ws) {
  return fa_project(H, U, R, psi, tol, diag, ws, false);
}

TangentDelta project(const SymOp& H, const FactoredPsd& base, const Tolerances& tol, Diagnostics* diag) {
  switch (base.kind()) {
    case Kind::LowRank: return project_low_rank(H, base.U(), base.R());
    case Kind::Ppca: return project_ppca(H, base.U(), base.R(), base.s(), tol, diag);
    case Kind::Fa: return fa_project(H, base.U(), base.R(), base.psi(), tol, diag, nullptr, true);
  }
  throw Error(ErrorCode::MismatchedVariant, "unknown kind");
}

// ---------------------------------------------------------------- monitors

double residual_norm_sq(const SymOp& H, const FactoredPsd& base, const TangentDelta& delta) {
  require(delta.kind() == base.kind(), ErrorCode::MismatchedVariant, "delta and base differ in form");
  const Mat& u = base.U().matrix();
  const Index d = base.dim(), p = base.rank();
  const Mat HU = H.mul_tall(u);
  const Mat UtHU = u.transpose() * HU;
  const double h2 = H.frob_sq();
  // Tr((I-UU^T) H (I-UU^T) H) = ||H||^2 - 2 ||HU||^2 + ||U^T H U||^2
  const double perp = h2 - 2.0 * HU.squaredNorm() + UtHU.squaredNorm();
  switch (base.kind()) {
    case Kind::LowRank:
      return perp;
    case Kind::Ppca: {
      // H - P(H) = (I-UU^T)(H - ds I)(I-UU^T)
      const double ds = delta.ds();
      const double tr_perp = H.diag_and_trace().trace - UtHU.trace();
      return perp - 2.0 * ds * tr_perp + ds * ds * static_cast<double>(d - p);
    }
    case Kind::Fa: {
      const Vec& x = delta.dpsi();
      FaSolverWorkspace ws;
      const Vec hbar = H.diag_and_trace().diag;
      detail::fa_normal_rhs(hbar, HU, UtHU, u, &ws);
      const Vec dbar = u.rowwise().squaredNorm();
      const Mat UtXU = u.transpose() * (u.array().colwise() * x.array()).matrix();
      const double alpha = perp - hbar.squaredNorm();
      return alpha + (hbar - x).squaredNorm() + 4.0 * ws.hbar_u.dot(x) -
             2.0 * x.dot(dbar.cwiseProduct(x)) - 2.0 * ws.lambda.dot(x) + UtXU.squaredNorm();
    }
  }
  throw Error(ErrorCode::MismatchedVariant, "unknown kind");
}

double tangent_norm_sq(const FactoredPsd& base, const TangentDelta& delta) {
  require(delta.kind() == base.kind(), ErrorCode::MismatchedVariant, "delta and base differ in form");
  const Mat& u = base.U().matrix();
  const Mat& R = base.R().matrix();
  const Mat& dR = delta.dR.matrix();
  const Index d = base.dim(), p = base.rank();
  switch (base.kind()) {
    case Kind::LowRank:
      return 2.0 * (delta.dU * R).squaredNorm() + dR.squaredNorm();
    case Kind::Ppca: {
      const double s = base.s(), ds = delta.ds();
      const Mat T = R - s * Mat::Identity(p, p);
      return 2.0 * (delta.dU * T).squaredNorm() + dR.squaredNorm() + ds * ds * static_cast<double>(d - p);
    }
    case Kind::Fa: {
      const Vec& x = delta.dpsi();
      // diagonal of the low-rank part: 2 (dU R U^T)_kk + (U dR U^T)_kk
      const Vec lr_diag = 2.0 * detail::row_dots(delta.dU * R, u) + detail::row_dots(u * dR, u);
      return 2.0 * (delta.dU * R).squaredNorm() + dR.squaredNorm() + 2.0 * lr_diag.dot(x) + x.squaredNorm();
    }
  }
  throw Error(ErrorCode::MismatchedVariant, "unknown kind");
}

Mat tangent_to_dense(const FactoredPsd& base, const TangentDelta& delta, const Tolerances& tol) {
  require(delta.kind() == base.kind(), ErrorCode::MismatchedVariant, "delta and base differ in form");
  const Index d = base.dim();
  require(static_cast<std::size_t>(d) <= tol.max_dense, ErrorCode::TooLargeToDensify, "d = " + std::to_string(d));
  const Mat& u = base.U().matrix();
  Mat R = base.R().matrix();
  Mat dR = delta.dR.matrix();
  if (base.kind() == Kind::Ppca) {
    R.diagonal().array() -= base.s();
    dR.diagonal().array() -= delta.ds();
  }
  const Mat half = delta.dU * R * u.transpose();
  Mat out = half + half.transpose();
  out.noalias() += u * dR * u.transpose();
  if (base.kind() == Kind::Ppca) out.diagonal().array() += delta.ds();
  if (base.kind() == Kind::Fa) out.diagonal() += delta.dpsi();
  return out;
}

}  // namespace lrdiag
