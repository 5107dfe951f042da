#include "lrdiag/factored.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/QR>

namespace lrdiag {

namespace {

std::string dims(const char* what, Index r, Index c) {
  std::ostringstream os;
  os << what << " is " << r << "x" << c;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------- Stiefel

Stiefel::Stiefel(Mat u, const Tolerances& tol) : u_(std::move(u)) {
  require(u_.cols() >= 1 && u_.cols() < u_.rows(), ErrorCode::DimensionMismatch,
          dims("Stiefel factor", u_.rows(), u_.cols()) + ", need 1 <= p < d");
  require(u_.allFinite(), ErrorCode::NotOrthonormal, "Stiefel factor has non-finite entries");
  const double err = orth_error();
  require(err <= tol.orth, ErrorCode::NotOrthonormal,
          "||U^T U - I||_F = " + std::to_string(err));
}

double Stiefel::orth_error() const {
  const Index p = u_.cols();
  return (u_.transpose() * u_ - Mat::Identity(p, p)).norm();
}

Stiefel Stiefel::orthonormalize(const Mat& a) {
  require(a.cols() >= 1 && a.cols() < a.rows(), ErrorCode::DimensionMismatch,
          dims("matrix to orthonormalize", a.rows(), a.cols()));
  Eigen::HouseholderQR<Mat> qr(a);
  const Index p = a.cols();
  Mat q = qr.householderQ() * Mat::Identity(a.rows(), p);
  const auto& packed = qr.matrixQR();
  const double scale = std::max(packed.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  for (Index j = 0; j < p; ++j) {
    const double rjj = packed(j, j);
    require(std::abs(rjj) > 1e-13 * scale, ErrorCode::RankDeficient,
            "QR breakdown at column " + std::to_string(j));
    if (rjj < 0) q.col(j) = -q.col(j);
  }
  return Stiefel(std::move(q), Trusted{});
}

// ---------------------------------------------------------------- small matrices

SymSmall::SymSmall(const Mat& m) {
  require(m.rows() == m.cols(), ErrorCode::DimensionMismatch, dims("symmetric matrix", m.rows(), m.cols()));
  m_ = 0.5 * (m + m.transpose());
}

SpdSmall::SpdSmall(const Mat& r) {
  require(r.rows() == r.cols() && r.rows() >= 1, ErrorCode::DimensionMismatch,
          dims("SPD matrix", r.rows(), r.cols()));
  require(r.allFinite(), ErrorCode::NotPd, "non-finite entries");
  r_ = 0.5 * (r + r.transpose());
  llt_.compute(r_);
  require(llt_.info() == Eigen::Success, ErrorCode::NotPd, "Cholesky factorization failed");
}

DiagPos::DiagPos(Vec v) : v_(std::move(v)) {
  for (Index k = 0; k < v_.size(); ++k)
    require(std::isfinite(v_[k]) && v_[k] > 0.0, ErrorCode::NonPositiveDiagonal,
            "entry " + std::to_string(k) + " = " + std::to_string(v_[k]));
}

// ---------------------------------------------------------------- FactoredPsd

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::LowRank: return "lowrank";
    case Kind::Ppca: return "ppca";
    case Kind::Fa: return "fa";
  }
  return "?";
}

FactoredPsd::FactoredPsd(Ppca v) : v_(std::move(v)) {
  const auto& y = std::get<Ppca>(v_);
  require(y.R.size() == y.U.rank(), ErrorCode::DimensionMismatch, "R size differs from rank of U");
  require(std::isfinite(y.s) && y.s > 0.0, ErrorCode::NonPositiveDiagonal,
          "s = " + std::to_string(y.s));
}

FactoredPsd::FactoredPsd(Fa v) : v_(std::move(v)) {
  const auto& y = std::get<Fa>(v_);
  require(y.R.size() == y.U.rank(), ErrorCode::DimensionMismatch, "R size differs from rank of U");
  require(y.psi.size() == y.U.dim(), ErrorCode::DimensionMismatch, "psi length differs from d");
}

const Stiefel& FactoredPsd::U() const {
  return std::visit([](const auto& y) -> const Stiefel& { return y.U; }, v_);
}

const SpdSmall& FactoredPsd::R() const {
  return std::visit([](const auto& y) -> const SpdSmall& { return y.R; }, v_);
}

double FactoredPsd::s() const {
  const auto* y = std::get_if<Ppca>(&v_);
  require(y != nullptr, ErrorCode::MismatchedVariant, "s() on a non-PPCA matrix");
  return y->s;
}

const DiagPos& FactoredPsd::psi() const {
  const auto* y = std::get_if<Fa>(&v_);
  require(y != nullptr, ErrorCode::MismatchedVariant, "psi() on a non-FA matrix");
  return y->psi;
}

FactoredPsd make_factored(Kind kind, Mat U, const Mat& R, const DiagSpec& diag,
                          const Tolerances& tol) {
  Stiefel u(std::move(U), tol);
  require(R.rows() == u.rank() && R.cols() == u.rank(), ErrorCode::DimensionMismatch,
          dims("R", R.rows(), R.cols()) + " for rank " + std::to_string(u.rank()));
  SpdSmall r(R);
  switch (kind) {
    case Kind::LowRank:
      require(std::holds_alternative<std::monostate>(diag), ErrorCode::MismatchedVariant,
              "low-rank form takes no diagonal part");
      return LowRank{std::move(u), std::move(r)};
    case Kind::Ppca: {
      const double* s = std::get_if<double>(&diag);
      require(s != nullptr, ErrorCode::MismatchedVariant, "PPCA form needs a scalar s");
      return Ppca{std::move(u), std::move(r), *s};
    }
    case Kind::Fa: {
      const Vec* psi = std::get_if<Vec>(&diag);
      require(psi != nullptr, ErrorCode::MismatchedVariant, "FA form needs a vector psi");
      require(psi->size() == u.dim(), ErrorCode::DimensionMismatch, "psi length differs from d");
      return Fa{std::move(u), std::move(r), DiagPos(*psi)};
    }
  }
  throw Error(ErrorCode::MismatchedVariant, "unknown kind");
}

// ---------------------------------------------------------------- algebra

Mat densify(const FactoredPsd& Y, const Tolerances& tol) {
  const Index d = Y.dim();
  require(static_cast<std::size_t>(d) <= tol.max_dense, ErrorCode::TooLargeToDensify,
          "d = " + std::to_string(d));
  const Mat& U = Y.U().matrix();
  const Mat& R = Y.R().matrix();
  Mat out;
  switch (Y.kind()) {
    case Kind::LowRank:
      out = U * R * U.transpose();
      break;
    case Kind::Ppca: {
      const double s = Y.s();
      const Index p = U.cols();
      out = U * (R - s * Mat::Identity(p, p)) * U.transpose();
      out.diagonal().array() += s;
      break;
    }
    case Kind::Fa:
      out = U * R * U.transpose();
      out.diagonal() += Y.psi().values();
      break;
  }
  return 0.5 * (out + out.transpose());
}

Mat apply(const FactoredPsd& Y, const Mat& X) {
  const Mat& U = Y.U().matrix();
  require(X.rows() == U.rows(), ErrorCode::DimensionMismatch, dims("operand", X.rows(), X.cols()));
  const Mat& R = Y.R().matrix();
  const Mat UtX = U.transpose() * X;
  switch (Y.kind()) {
    case Kind::LowRank:
      return U * (R * UtX);
    case Kind::Ppca: {
      const double s = Y.s();
      Mat out = s * X;
      out.noalias() += U * (R * UtX - s * UtX);
      return out;
    }
    case Kind::Fa: {
      Mat out = X.array().colwise() * Y.psi().values().array();
      out.noalias() += U * (R * UtX);
      return out;
    }
  }
  throw Error(ErrorCode::MismatchedVariant, "unknown kind");
}

Mat woodbury_solve(const FactoredPsd& Y, const Mat& B) {
  const Mat& U = Y.U().matrix();
  require(B.rows() == U.rows(), ErrorCode::DimensionMismatch, dims("right-hand side", B.rows(), B.cols()));
  switch (Y.kind()) {
    case Kind::LowRank:
      throw Error(ErrorCode::NotInvertible, "a rank-p matrix has no inverse");
    case Kind::Ppca: {
      // With orthonormal U the capacitance system collapses:
      // Y^{-1} = U R^{-1} U^T + s^{-1} (I - U U^T).
      const double s = Y.s();
      const Mat UtB = U.transpose() * B;
      Mat out = (B - U * UtB) / s;
      out.noalias() += U * Y.R().llt().solve(UtB);
      return out;
    }
    case Kind::Fa: {
      // (U R U^T + psi)^{-1} = psi^{-1} - psi^{-1} U (R^{-1} + U^T psi^{-1} U)^{-1} U^T psi^{-1}
      const Vec inv_psi = Y.psi().values().cwiseInverse();
      const Mat PsiInvU = U.array().colwise() * inv_psi.array();
      const Index p = U.cols();
      Mat cap = Y.R().llt().solve(Mat::Identity(p, p));
      cap.noalias() += U.transpose() * PsiInvU;
      cap = 0.5 * (cap + cap.transpose());
      Eigen::LLT<Mat> llt(cap);
      require(llt.info() == Eigen::Success, ErrorCode::SingularSmallSystem,
              "capacitance matrix is not positive definite");
      const Mat PsiInvB = B.array().colwise() * inv_psi.array();
      Mat out = PsiInvB;
      out.noalias() -= PsiInvU * llt.solve(U.transpose() * PsiInvB);
      return out;
    }
  }
  throw Error(ErrorCode::MismatchedVariant, "unknown kind");
}

Mat standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat out(rows, cols);
  // Column-major fill order is part of the reproducibility contract.
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
  return out;
}

Mat sample_ppca_gaussian(const Vec& mean, const FactoredPsd& Y, Index n, Rng& rng) {
  require(Y.kind() == Kind::Ppca, ErrorCode::MismatchedVariant, "sampler needs the PPCA form");
  const Mat& U = Y.U().matrix();
  require(mean.size() == U.rows(), ErrorCode::DimensionMismatch, "mean length differs from d");
  const Index p = U.cols();
  const Mat L = Y.R().llt().matrixL();
  const Mat z3 = L * standard_normal(p, n, rng);
  Mat z4 = std::sqrt(Y.s()) * standard_normal(U.rows(), n, rng);
  const Mat Utz4 = U.transpose() * z4;
  z4.noalias() += U * (z3 - Utz4);
  z4.colwise() += mean;
  return z4;
}

Mat sample_gaussian(const Vec& mean, const FactoredPsd& Y, Index n, Rng& rng) {
  if (Y.kind() == Kind::Ppca) return sample_ppca_gaussian(mean, Y, n, rng);
  const Mat& U = Y.U().matrix();
  require(mean.size() == U.rows(), ErrorCode::DimensionMismatch, "mean length differs from d");
  const Mat L = Y.R().llt().matrixL();
  Mat x = U * (L * standard_normal(U.cols(), n, rng));
  if (Y.kind() == Kind::Fa)
    x.array() += standard_normal(U.rows(), n, rng).array().colwise() * Y.psi().values().array().sqrt();
  x.colwise() += mean;
  return x;
}

Stiefel random_stiefel(Index d, Index p, Rng& rng) {
  return Stiefel::orthonormalize(standard_normal(d, p, rng));
}

Mat random_spd(Index p, Rng& rng, double floor) {
  const Mat a = standard_normal(p, p, rng);
  Mat r = a * a.transpose() / static_cast<double>(p);
  r.diagonal().array() += floor;
  return r;
}

}  // namespace lrdiag
