#pragma once

// Vector fields of the Riccati equation
//
//   dP/dt = A P + P A^T + Q - P S P,   S = C^T N^{-1} C,
//
// evaluated directly in factored form for each covariance variant, plus a
// dense reference used as an oracle. S is never formed: it is reached only
// through the sparse C and the Cholesky factor of N.

#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/SparseCore>

#include "lrdiag/integrate.hpp"
#include "lrdiag/projection.hpp"
#include "lrdiag/symop.hpp"

namespace lrdiag {

using SparseMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Drift operator: zero, diagonal, or A = Ua Va^T (sum of outer products u v^T).
class LinOpA {
 public:
  struct Zero {
    Index d;
  };
  struct Diagonal {
    Vec a;
  };
  struct Outer {
    Mat Ua, Va;
  };

  static LinOpA zero(Index d) { return LinOpA(Zero{d}); }
  static LinOpA diagonal(Vec a) { return LinOpA(Diagonal{std::move(a)}); }
  static LinOpA outer(Mat Ua, Mat Va);

  Index dim() const;
  Mat apply(const Mat& X) const;    // A X
  Mat apply_t(const Mat& X) const;  // A^T X
  Vec diagonal() const;
  double trace() const;
  Mat densify(const Tolerances& tol = default_tolerances()) const;
  bool is_zero() const { return std::holds_alternative<Zero>(form_); }

 private:
  explicit LinOpA(std::variant<Zero, Diagonal, Outer> f) : form_(std::move(f)) {}
  std::variant<Zero, Diagonal, Outer> form_;
};

class RiccatiParams {
 public:
  /// C is k x d (k may be 0), N is k x k SPD. Q must be PSD term-wise.
  RiccatiParams(LinOpA A, SymOp Q, SparseMat C, const Mat& N);
  /// Diagonal N given by its (positive) entries; never materialized.
  RiccatiParams(LinOpA A, SymOp Q, SparseMat C, const Vec& n_diag);

  Index dim() const { return A_.dim(); }
  Index obs_dim() const { return static_cast<Index>(C_.rows()); }
  const LinOpA& A() const { return A_; }
  const SymOp& Q() const { return Q_; }
  const SparseMat& C() const { return C_; }
  Mat N() const;

  Mat solve_N(const Mat& V) const;          // N^{-1} V
  Mat apply_S(const Mat& X) const;          // C^T N^{-1} C X
  const Vec& diag_S() const { return diag_s_; }
  double trace_S() const { return diag_s_.sum(); }
  /// (CX)^T N^{-1} (CX) for tall X.
  Mat quad_S(const Mat& X) const;
  /// Dense S (oracle use).
  Mat dense_S(const Tolerances& tol = default_tolerances()) const;

 private:
  LinOpA A_;
  SymOp Q_;
  SparseMat C_;
  Mat N_;                 // dense N (empty when diagonal)
  Vec n_diag_;            // diagonal N (empty when dense)
  Eigen::LLT<Mat> n_llt_;
  Vec diag_s_;

  void finish();
};

/// Noisy observation of a Brownian motion: A = 0, Q = lambda I, C = I, N = nu I.
RiccatiParams brownian_params(Index d, double lambda, double nu);

SparseMat sparse_identity(Index d);

// ---------------------------------------------------------------- dense oracle

Mat dense_riccati_rhs(const Mat& P, const RiccatiParams& params,
                      const Tolerances& tol = default_tolerances());

struct DenseTrajectory {
  std::vector<double> times;
  std::vector<Mat> states;
  double min_eigenvalue = 0.0;  // smallest eigenvalue over recorded states
};

/// Classical RK4 on the dense Riccati equation; records every cfg.record_every steps.
DenseTrajectory integrate_dense_riccati(const Mat& P0, const RiccatiParams& params,
                                       const IntegratorConfig& cfg);

/// One RK4 step of a generic dense matrix ODE.
Mat rk4_step(const std::function<Mat(const Mat&)>& f, const Mat& X, double h);

// ---------------------------------------------------------------- factored fields

TangentDelta lowrank_riccati_delta(const Stiefel& U, const SpdSmall& R, const RiccatiParams& params);

TangentDelta ppca_riccati_delta(const Stiefel& U, const SpdSmall& R, double s, const RiccatiParams& params,
                                const Tolerances& tol = default_tolerances(), Diagnostics* diag = nullptr);

TangentDelta fa_riccati_delta(const Stiefel& U, const SpdSmall& R, const DiagPos& psi,
                              const RiccatiParams& params, const Tolerances& tol = default_tolerances(),
                              Diagnostics* diag = nullptr);

/// Dispatches on the form of Y.
TangentDelta riccati_delta(const FactoredPsd& Y, const RiccatiParams& params,
                           const Tolerances& tol = default_tolerances(), Diagnostics* diag = nullptr);

}  // namespace lrdiag
