#include <doctest.h>

#include "lrdiag/alloc_probe.hpp"
#include "lrdiag/projection.hpp"
#include "support/oracles.hpp"

using namespace lrdiag;

namespace {

constexpr Kind kAllKinds[] = {Kind::LowRank, Kind::Ppca, Kind::Fa};

double rel(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

Mat dense_projection(const SymOp& H, const FactoredPsd& base) {
  return tangent_to_dense(base, project(H, base));
}

// Y(U, R, diag) evaluated without assuming orthonormal U: the curve used for
// finite differences of the parameterization.
Mat param_dense(Kind kind, const Mat& U, const Mat& R, double s, const Vec& psi) {
  const Index d = U.rows();
  switch (kind) {
    case Kind::LowRank: return U * R * U.transpose();
    case Kind::Ppca: {
      Mat out = U * (R - s * Mat::Identity(R.rows(), R.cols())) * U.transpose();
      out.diagonal().array() += s;
      return out;
    }
    case Kind::Fa: {
      Mat out = U * R * U.transpose();
      out.diagonal() += psi.head(d);
      return out;
    }
  }
  return {};
}

}  // namespace

TEST_CASE("low-rank projection examples") {
  Rng rng(1);
  const Index d = 12, p = 3;
  const FactoredPsd base = testing::random_factored(Kind::LowRank, d, p, rng);
  const Mat& U = base.U().matrix();

  Mat M = standard_normal(p, p, rng);
  M = (M + M.transpose()).eval();
  // H = U M U^T with M indefinite, encoded via from_dense.
  const Mat Hd = U * M * U.transpose();
  const TangentDelta t = project_low_rank(SymOp::from_dense(Hd), base.U(), base.R());
  CHECK(t.dU.norm() <= 1e-12);
  CHECK((t.dR.matrix() - M).norm() <= 1e-12);
  CHECK((tangent_to_dense(base, t) - Hd).norm() <= 1e-12);

  const TangentDelta ti = project_low_rank(SymOp::diagonal(Vec::Ones(d)), base.U(), base.R());
  CHECK(ti.dU.norm() <= 1e-12);
  CHECK((ti.dR.matrix() - Mat::Identity(p, p)).norm() <= 1e-12);
}

TEST_CASE("PPCA projection examples") {
  Rng rng(2);
  const Index d = 15, p = 4;
  const FactoredPsd base = testing::random_factored(Kind::Ppca, d, p, rng);
  const TangentDelta t = project(SymOp::diagonal(Vec::Ones(d)), base);
  CHECK(t.ds() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(t.dU.norm() <= 1e-12);
  CHECK((t.dR.matrix() - Mat::Identity(p, p)).norm() <= 1e-12);
  CHECK((tangent_to_dense(base, t) - Mat::Identity(d, d)).norm() <= 1e-12);
  CHECK(residual_norm_sq(SymOp::diagonal(Vec::Ones(d)), base, t) == doctest::Approx(0.0).epsilon(1e-10));

  const Mat& U = base.U().matrix();
  Mat M = standard_normal(p, p, rng);
  M = (M + M.transpose()).eval();
  const TangentDelta tm = project(SymOp::from_dense(U * M * U.transpose()), base);
  CHECK(std::abs(tm.ds()) <= 1e-12);
}

TEST_CASE("FA projection examples") {
  Rng rng(3);
  const Index d = 14, p = 3;
  const FactoredPsd base = testing::random_factored(Kind::Fa, d, p, rng);
  Vec h(d);
  for (Index k = 0; k < d; ++k) h[k] = 0.3 * static_cast<double>(k) - 1.0;
  const SymOp Hdiag = SymOp::diagonal(h);
  for (const auto& t : {project_fa_dense(Hdiag, base.U(), base.R(), base.psi()),
                        project_fa_fast(Hdiag, base.U(), base.R(), base.psi())}) {
    CHECK(rel(tangent_to_dense(base, t), Hdiag.densify()) <= 1e-10);
    CHECK(std::abs(residual_norm_sq(Hdiag, base, t)) <= 1e-9 * h.squaredNorm());
  }

  const Mat& U = base.U().matrix();
  Mat M = standard_normal(p, p, rng);
  M = (M + M.transpose()).eval();
  const Mat Hd = U * M * U.transpose();
  const TangentDelta tm = project_fa_fast(SymOp::from_dense(Hd), base.U(), base.R(), base.psi());
  CHECK(rel(tangent_to_dense(base, tm), Hd) <= 1e-9);

  const SymOp I = SymOp::diagonal(Vec::Ones(d));
  const TangentDelta ti = project_fa_fast(I, base.U(), base.R(), base.psi());
  CHECK(rel(tangent_to_dense(base, ti), Mat::Identity(d, d)) <= 1e-10);
  CHECK(std::abs(residual_norm_sq(I, base, ti)) <= 1e-9 * d);
}

TEST_CASE("projectors match the tangent-basis least-squares oracle") {
  Rng rng(4);
  for (Kind kind : kAllKinds) {
    for (int trial = 0; trial < 5; ++trial) {
      const FactoredPsd base = testing::random_factored(kind, 20, 3, rng);
      const SymOp H = testing::random_symop(20, rng, 6);
      const Mat oracle = testing::least_squares_projection(base, H.densify());
      CHECK_MESSAGE(rel(dense_projection(H, base), oracle) <= 1e-8, kind_name(kind));
      if (kind == Kind::Fa) {
        const TangentDelta td = project_fa_dense(H, base.U(), base.R(), base.psi());
        CHECK(rel(tangent_to_dense(base, td), oracle) <= 1e-8);
      }
    }
  }
}

TEST_CASE("FA fast path agrees with the dense path on 100 instances") {
  Rng rng(5);
  std::uniform_int_distribution<Index> pd(1, 6);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index p = pd(rng);
    std::uniform_int_distribution<Index> dd(p + 2, 50);
    const Index d = dd(rng);
    const FactoredPsd base = testing::random_factored(Kind::Fa, d, p, rng);
    const SymOp H = testing::random_symop(d, rng, 4);
    Diagnostics diag;
    const Mat fast = tangent_to_dense(base, project_fa_fast(H, base.U(), base.R(), base.psi(), {}, &diag));
    const Mat dense = tangent_to_dense(base, project_fa_dense(H, base.U(), base.R(), base.psi()));
    worst = std::max(worst, (fast - dense).norm());
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("FA fast path falls back when phi is ill conditioned") {
  // U = (e_0 + e_1)/sqrt(2) makes 1 - 2 Dbar_kk = 0 for k = 0, 1.
  const Index d = 10, p = 1;
  Mat U = Mat::Zero(d, p);
  U(0, 0) = U(1, 0) = std::sqrt(0.5);
  const FactoredPsd base = make_factored(Kind::Fa, U, Mat::Identity(p, p), Vec::Ones(d));
  Rng rng(6);
  const SymOp H = testing::random_symop(d, rng, 3);
  Diagnostics diag;
  const TangentDelta t = project_fa_fast(H, base.U(), base.R(), base.psi(), {}, &diag);
  CHECK(diag.ill_conditioned_phi + diag.fa_regularized >= 1);
  const Mat oracle = testing::least_squares_projection(base, H.densify());
  CHECK(rel(tangent_to_dense(base, t), oracle) <= 1e-6);
}

TEST_CASE("residual monitor and tangent norm match dense computation") {
  Rng rng(7);
  for (Kind kind : kAllKinds) {
    for (int trial = 0; trial < 5; ++trial) {
      const FactoredPsd base = testing::random_factored(kind, 25, 4, rng);
      const SymOp H = testing::random_symop(25, rng, 5);
      const TangentDelta t = project(H, base);
      const Mat dY = tangent_to_dense(base, t);
      const Mat Hd = H.densify();
      const double res_dense = (Hd - dY).squaredNorm();
      const double res = residual_norm_sq(H, base, t);
      CHECK_MESSAGE(std::abs(res - res_dense) <= 1e-8 * Hd.squaredNorm(), kind_name(kind));
      CHECK(std::abs(tangent_norm_sq(base, t) - dY.squaredNorm()) <= 1e-10 * (1.0 + dY.squaredNorm()));
      // Pythagoras
      CHECK(std::abs(H.frob_sq() - res - tangent_norm_sq(base, t)) <= 1e-8 * H.frob_sq());
    }
  }
}

TEST_CASE("residual of an operator normal to the tangent space") {
  Rng rng(8);
  const Index d = 16, p = 3;
  const FactoredPsd base = testing::random_factored(Kind::LowRank, d, p, rng);
  const Mat G = detail::project_out(base.U().matrix(), standard_normal(d, 2, rng));
  const SymOp H = SymOp::outer(1.0, G);
  const double expect = (G.transpose() * G).squaredNorm();
  CHECK(residual_norm_sq(H, base, project(H, base)) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("property: residual orthogonality, idempotence, linearity, contraction") {
  Rng rng(9);
  for (Kind kind : kAllKinds) {
    for (int trial = 0; trial < 4; ++trial) {
      const Index d = 18, p = 3;
      const FactoredPsd base = testing::random_factored(kind, d, p, rng);
      const SymOp H1 = testing::random_symop(d, rng, 4);
      const SymOp H2 = testing::random_symop(d, rng, 3);
      const Mat Hd = H1.densify();
      const Mat P1 = dense_projection(H1, base);

      const Mat B = testing::tangent_basis(base);
      const Mat resid = Hd - P1;
      const Vec r = Eigen::Map<const Vec>(resid.data(), d * d);
      for (Index c = 0; c < B.cols(); ++c)
        CHECK(std::abs(r.dot(B.col(c))) <= 1e-8 * Hd.norm() * B.col(c).norm());

      const SymOp T = SymOp::from_dense(P1);
      const TangentDelta tt = project(T, base);
      CHECK(rel(tangent_to_dense(base, tt), P1) <= 1e-8);

      const double a = 1.7, b = -0.4;
      const Mat Pab = dense_projection(add(scale(H1, a), scale(H2, b)), base);
      const Mat lin = a * P1 + b * dense_projection(H2, base);
      CHECK((Pab - lin).norm() <= 1e-10 * std::max(1.0, lin.norm()));

      CHECK(P1.norm() <= Hd.norm() + 1e-10);
    }
  }
}

TEST_CASE("tangent_to_dense") {
  Rng rng(10);
  for (Kind kind : kAllKinds) {
    const FactoredPsd base = testing::random_factored(kind, 10, 2, rng);
    CHECK(tangent_to_dense(base, TangentDelta::zero(base)).norm() == 0.0);
  }
  const FactoredPsd ppca = testing::random_factored(Kind::Ppca, 10, 2, rng);
  TangentDelta t = TangentDelta::zero(ppca);
  t.dR = SymSmall(Mat::Identity(2, 2));
  t.diag_part = 1.0;
  CHECK((tangent_to_dense(ppca, t) - Mat::Identity(10, 10)).norm() <= 1e-13);

  // Finite differences of the parameterization along a random tangent direction.
  for (Kind kind : kAllKinds) {
    const Index d = 12, p = 3;
    const FactoredPsd base = testing::random_factored(kind, d, p, rng);
    const Mat& U = base.U().matrix();
    const Mat& R = base.R().matrix();
    TangentDelta delta = TangentDelta::zero(base);
    delta.dU = detail::project_out(U, standard_normal(d, p, rng));
    Mat dR = standard_normal(p, p, rng);
    delta.dR = SymSmall(dR);
    double s = 0.0, ds = 0.0;
    Vec psi = Vec::Zero(d), dpsi = Vec::Zero(d);
    if (kind == Kind::Ppca) {
      s = base.s();
      ds = 0.7;
      delta.diag_part = ds;
    } else if (kind == Kind::Fa) {
      psi = base.psi().values();
      dpsi = standard_normal(d, 1, rng);
      delta.diag_part = Vec(dpsi);
    }
    const Mat analytic = tangent_to_dense(base, delta);
    std::vector<double> hs, errs;
    for (double h : {1e-3, 1e-4, 1e-5, 1e-6}) {
      const Mat Yh = param_dense(kind, U + h * delta.dU, R + h * delta.dR.matrix(), s + h * ds, psi + h * dpsi);
      const Mat Y0 = param_dense(kind, U, R, s, psi);
      const double err = ((Yh - Y0) / h - analytic).norm();
      hs.push_back(h);
      errs.push_back(err);
    }
    CHECK(errs.back() <= 1e-4 * std::max(1.0, analytic.norm()));
    CHECK(testing::loglog_slope({hs.begin(), hs.begin() + 3}, {errs.begin(), errs.begin() + 3}) ==
          doctest::Approx(1.0).epsilon(0.1));
  }
}

TEST_CASE("PPCA near-singular R - sI uses the shifted solve") {
  const Index d = 8, p = 2;
  Rng rng(11);
  const Mat U = random_stiefel(d, p, rng).matrix();
  const Mat R = (Vec(2) << 0.5, 2.0).finished().asDiagonal();
  const FactoredPsd base = make_factored(Kind::Ppca, U, R, 0.5);
  Diagnostics diag;
  const TangentDelta t = project_ppca(testing::random_symop(d, rng, 3), base.U(), base.R(), 0.5, {}, &diag);
  CHECK(diag.near_singular_rs == 1);
  CHECK(t.dU.allFinite());
}

TEST_CASE("projection at large d never allocates a d x d buffer") {
  const Index d = 10000, p = 5;
  Rng rng(12);
  for (Kind kind : kAllKinds) {
    const FactoredPsd base = testing::random_factored(kind, d, p, rng);
    const SymOp H = testing::random_symop(d, rng, 6);
    alloc_probe::reset();
    const TangentDelta t = project(H, base);
    const double res = residual_norm_sq(H, base, t);
    const double tn = tangent_norm_sq(base, t);
    const std::size_t largest = alloc_probe::largest_request_since_reset();
    const std::size_t peak = alloc_probe::peak_bytes_since_reset();
    CHECK_MESSAGE(largest <= static_cast<std::size_t>(d) * 64 * sizeof(double), kind_name(kind));
    CHECK(peak <= static_cast<std::size_t>(d) * 400 * sizeof(double));
    CHECK(res >= -1e-8 * H.frob_sq());
    CHECK(std::abs(H.frob_sq() - res - tn) <= 1e-8 * H.frob_sq());
  }
}

TEST_CASE("FA dispatch switches to the direct solve when p(p+1)/2 > d") {
  CHECK_FALSE(detail::fa_prefers_dense(100, 8, default_tolerances()));
  CHECK(detail::fa_prefers_dense(40, 10, default_tolerances()));
  CHECK_FALSE(detail::fa_prefers_dense(100000, 500, default_tolerances()));
  Rng rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Index d = 8 + trial % 4, p = 5 + trial % 3;
    const SymOp H = testing::random_symop(d, rng);
    const FactoredPsd base = testing::random_factored(Kind::Fa, d, p, rng);
    REQUIRE(detail::fa_prefers_dense(d, p, default_tolerances()));
    const Mat got = tangent_to_dense(base, project(H, base));
    worst = std::max(worst, (got - testing::least_squares_projection(base, H.densify())).norm());
  }
  CHECK(worst <= 1e-8);
}
