#include "lrdiag/symop.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "lrdiag/kernels.hpp"

namespace lrdiag {

SymOp::SymOp(Index d, std::vector<OuterTerm> terms, std::optional<Vec> diag, const Tolerances& tol)
    : d_(d), terms_(std::move(terms)), diag_(std::move(diag)) {
  require(d_ >= 1, ErrorCode::DimensionMismatch, "operator dimension must be positive");
  for (const auto& t : terms_) {
    require(t.G.rows() == d_, ErrorCode::DimensionMismatch,
            "factor has " + std::to_string(t.G.rows()) + " rows, expected " + std::to_string(d_));
    width_ += t.G.cols();
  }
  require(static_cast<std::size_t>(width_) <= tol.max_width, ErrorCode::WidthExceeded,
          "total factor width " + std::to_string(width_) + " exceeds " + std::to_string(tol.max_width));
  if (diag_)
    require(diag_->size() == d_, ErrorCode::DimensionMismatch, "diagonal term length differs from d");
}

SymOp SymOp::symmetric_product(double a, const Mat& X, const Mat& Y, const Tolerances& tol) {
  require(X.rows() == Y.rows() && X.cols() == Y.cols(), ErrorCode::DimensionMismatch,
          "symmetric product factors differ in shape");
  std::vector<OuterTerm> terms;
  terms.push_back({a, X + Y});
  terms.push_back({-a, X});
  terms.push_back({-a, Y});
  return SymOp(X.rows(), std::move(terms), std::nullopt, tol);
}

SymOp SymOp::from_dense(const Mat& H, const Tolerances& tol) {
  const Index d = H.rows();
  require(H.cols() == d, ErrorCode::DimensionMismatch, "dense operator must be square");
  require(static_cast<std::size_t>(d) <= tol.max_dense, ErrorCode::TooLargeToDensify,
          "d = " + std::to_string(d));
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (H + H.transpose()));
  const Vec& lam = eig.eigenvalues();
  const Mat& V = eig.eigenvectors();
  Index npos = 0;
  for (Index i = 0; i < d; ++i) npos += lam[i] >= 0.0;
  Mat pos(d, npos), neg(d, d - npos);
  for (Index i = 0, a = 0, b = 0; i < d; ++i) {
    if (lam[i] >= 0.0) pos.col(a++) = std::sqrt(lam[i]) * V.col(i);
    else neg.col(b++) = std::sqrt(-lam[i]) * V.col(i);
  }
  std::vector<OuterTerm> terms;
  if (npos > 0) terms.push_back({1.0, std::move(pos)});
  if (npos < d) terms.push_back({-1.0, std::move(neg)});
  Tolerances wide = tol;
  wide.max_width = std::max<std::size_t>(tol.max_width, static_cast<std::size_t>(d));
  return SymOp(d, std::move(terms), std::nullopt, wide);
}

Mat SymOp::mul_tall(const Mat& M) const {
  require(M.rows() == d_, ErrorCode::DimensionMismatch, "operand row count differs from d");
  Mat out = diag_ ? Mat(M.array().colwise() * diag_->array()) : Mat::Zero(d_, M.cols());
  for (const auto& t : terms_) {
    const Mat GtM = t.G.transpose() * M;
    out.noalias() += t.alpha * (t.G * GtM);
  }
  return out;
}

Mat SymOp::quad_small(const Mat& U) const {
  require(U.rows() == d_, ErrorCode::DimensionMismatch, "operand row count differs from d");
  const Index p = U.cols();
  Mat out = Mat::Zero(p, p);
  if (diag_) {
    const Mat cU = U.array().colwise() * diag_->array();
    out.noalias() += U.transpose() * cU;
  }
  for (const auto& t : terms_) {
    const Mat UtG = U.transpose() * t.G;
    out.noalias() += t.alpha * (UtG * UtG.transpose());
  }
  return 0.5 * (out + out.transpose());
}

SymOp::DiagTrace SymOp::diag_and_trace() const {
  const auto& k = kernels::active();
  Vec h = diag_ ? *diag_ : Vec::Zero(d_);
  const auto n = static_cast<std::size_t>(d_);
  for (const auto& t : terms_)
    for (Index j = 0; j < t.G.cols(); ++j) k.sq_accum(h.data(), t.G.col(j).data(), t.alpha, n);
  const double tr = h.sum();
  return {std::move(h), tr};
}

double SymOp::frob_sq() const {
  const auto& k = kernels::active();
  const auto n = static_cast<std::size_t>(d_);
  double total = 0.0;
  for (std::size_t a = 0; a < terms_.size(); ++a) {
    for (std::size_t b = a; b < terms_.size(); ++b) {
      const Mat cross = terms_[a].G.transpose() * terms_[b].G;
      const double w = terms_[a].alpha * terms_[b].alpha * cross.squaredNorm();
      total += (a == b) ? w : 2.0 * w;
    }
  }
  if (diag_) {
    const Vec& c = *diag_;
    for (const auto& t : terms_)
      for (Index j = 0; j < t.G.cols(); ++j) {
        const double* g = t.G.col(j).data();
        total += 2.0 * t.alpha * k.wdot(c.data(), g, g, n);
      }
    total += c.squaredNorm();
  }
  return total;
}

Mat SymOp::densify(const Tolerances& tol) const {
  require(static_cast<std::size_t>(d_) <= tol.max_dense, ErrorCode::TooLargeToDensify,
          "d = " + std::to_string(d_));
  Mat out = Mat::Zero(d_, d_);
  for (const auto& t : terms_) out.noalias() += t.alpha * (t.G * t.G.transpose());
  if (diag_) out.diagonal() += *diag_;
  return out;
}

SymOp make_symop(Index d, std::vector<OuterTerm> terms, std::optional<Vec> diag, const Tolerances& tol) {
  return SymOp(d, std::move(terms), std::move(diag), tol);
}

SymOp add(const SymOp& a, const SymOp& b, const Tolerances& tol) {
  require(a.dim() == b.dim(), ErrorCode::DimensionMismatch, "operators differ in dimension");
  std::vector<OuterTerm> terms = a.terms();
  terms.insert(terms.end(), b.terms().begin(), b.terms().end());
  std::optional<Vec> diag;
  if (a.diag_term() && b.diag_term()) diag = *a.diag_term() + *b.diag_term();
  else if (a.diag_term()) diag = a.diag_term();
  else if (b.diag_term()) diag = b.diag_term();
  return SymOp(a.dim(), std::move(terms), std::move(diag), tol);
}

SymOp scale(const SymOp& h, double a) {
  std::vector<OuterTerm> terms = h.terms();
  for (auto& t : terms) t.alpha *= a;
  std::optional<Vec> diag;
  if (h.diag_term()) diag = a * *h.diag_term();
  Tolerances wide;
  wide.max_width = std::max<std::size_t>(wide.max_width, static_cast<std::size_t>(h.width()));
  return SymOp(h.dim(), std::move(terms), std::move(diag), wide);
}

}  // namespace lrdiag
