#pragma once

// Structured symmetric operator H = sum_j alpha_j G_j G_j^T + diag(c).
// Every derivative fed to the projections is carried in this form so that
// products with tall matrices, the diagonal, the trace and ||H||_F^2 all cost
// O(d * width) or O(d * width^2) instead of O(d^2).

#include <optional>
#include <vector>

#include "lrdiag/factored.hpp"

namespace lrdiag {

struct OuterTerm {
  double alpha;
  Mat G;  // d x r
};

class SymOp {
 public:
  SymOp(Index d, std::vector<OuterTerm> terms, std::optional<Vec> diag = std::nullopt,
        const Tolerances& tol = default_tolerances());

  static SymOp zero(Index d) { return SymOp(d, {}); }
  static SymOp diagonal(Vec c) { const Index d = c.size(); return SymOp(d, {}, std::move(c)); }
  static SymOp outer(double alpha, Mat G) {
    const Index d = G.rows();
    return SymOp(d, {OuterTerm{alpha, std::move(G)}});
  }
  /// a (X Y^T + Y X^T) encoded as a [(X+Y)(X+Y)^T - X X^T - Y Y^T].
  static SymOp symmetric_product(double a, const Mat& X, const Mat& Y,
                                 const Tolerances& tol = default_tolerances());
  /// Exact re-encoding of a dense symmetric matrix through its eigenpairs
  /// (oracle use, d <= tol.max_dense and d <= tol.max_width).
  static SymOp from_dense(const Mat& H, const Tolerances& tol = default_tolerances());

  Index dim() const noexcept { return d_; }
  Index width() const noexcept { return width_; }
  const std::vector<OuterTerm>& terms() const noexcept { return terms_; }
  const std::optional<Vec>& diag_term() const noexcept { return diag_; }

  Mat mul_tall(const Mat& M) const;
  /// U^T H U, O(d * width * p) without forming H U.
  Mat quad_small(const Mat& U) const;
  struct DiagTrace {
    Vec diag;
    double trace;
  };
  DiagTrace diag_and_trace() const;
  double frob_sq() const;
  Mat densify(const Tolerances& tol = default_tolerances()) const;

 private:
  Index d_;
  Index width_ = 0;
  std::vector<OuterTerm> terms_;
  std::optional<Vec> diag_;
};

SymOp make_symop(Index d, std::vector<OuterTerm> terms, std::optional<Vec> diag = std::nullopt,
                 const Tolerances& tol = default_tolerances());
SymOp add(const SymOp& a, const SymOp& b, const Tolerances& tol = default_tolerances());
SymOp scale(const SymOp& h, double a);

}  // namespace lrdiag
