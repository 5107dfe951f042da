#include <doctest.h>

#include <Eigen/LU>

#include "lrdiag/alloc_probe.hpp"
#include "lrdiag/riccati.hpp"
#include "support/oracles.hpp"

using namespace lrdiag;

namespace {
constexpr Kind kAllKinds[] = {Kind::LowRank, Kind::Ppca, Kind::Fa};
}

TEST_CASE("LinOpA forms agree with their dense matrices") {
  Rng rng(1);
  const Index d = 9;
  const Mat X = standard_normal(d, 3, rng);
  const Vec a = standard_normal(d, 1, rng);
  const Mat Ua = standard_normal(d, 2, rng), Va = standard_normal(d, 2, rng);
  for (const LinOpA& A : {LinOpA::zero(d), LinOpA::diagonal(a), LinOpA::outer(Ua, Va)}) {
    const Mat D = A.densify();
    CHECK((A.apply(X) - D * X).norm() <= 1e-12);
    CHECK((A.apply_t(X) - D.transpose() * X).norm() <= 1e-12);
    CHECK((A.diagonal() - D.diagonal()).norm() <= 1e-12);
    CHECK(A.trace() == doctest::Approx(D.trace()));
  }
  CHECK((LinOpA::outer(Ua, Va).densify() - Ua * Va.transpose()).norm() <= 1e-12);
}

TEST_CASE("parameters: S is reached only through C and N") {
  Rng rng(2);
  for (int variant = 0; variant < 2; ++variant) {
    const RiccatiParams prm = testing::random_riccati_params(15, 4, rng, variant);
    const Mat C = Mat(prm.C());
    const Mat S = C.transpose() * prm.N().inverse() * C;
    CHECK((prm.dense_S() - S).norm() <= 1e-10 * S.norm());
    CHECK((prm.diag_S() - S.diagonal()).norm() <= 1e-10 * S.norm());
    CHECK(prm.trace_S() == doctest::Approx(S.trace()));
    const Mat X = standard_normal(15, 2, rng);
    CHECK((prm.quad_S(X) - X.transpose() * S * X).norm() <= 1e-10 * (1 + S.norm()));
  }
  CHECK_THROWS_AS(RiccatiParams(LinOpA::zero(3), SymOp::zero(3), sparse_identity(3), Mat(-Mat::Identity(3, 3))),
                  Error);
  CHECK_THROWS_AS(RiccatiParams(LinOpA::zero(3), SymOp::outer(-1.0, Mat::Ones(3, 1)), sparse_identity(3),
                                Vec(Vec::Ones(3))),
                  Error);
}

TEST_CASE("dense Riccati right-hand side") {
  const Index d = 6;
  const RiccatiParams unit(LinOpA::zero(d), SymOp::zero(d), sparse_identity(d), Mat(Mat::Identity(d, d)));
  CHECK((dense_riccati_rhs(Mat::Identity(d, d), unit) + Mat::Identity(d, d)).norm() <= 1e-15);

  Rng rng(3);
  const RiccatiParams prm = testing::random_riccati_params(20, 5, rng, 2);
  CHECK((dense_riccati_rhs(Mat::Zero(20, 20), prm) - prm.Q().densify()).norm() <= 1e-14);
  Mat P = random_spd(20, rng);
  const Mat F = dense_riccati_rhs(P, prm);
  CHECK((F - F.transpose()).norm() <= 1e-12);
  // Against the textbook expression.
  const Mat A = prm.A().densify();
  const Mat C = Mat(prm.C());
  const Mat ref = A * P + P * A.transpose() + prm.Q().densify() - P * C.transpose() * prm.N().inverse() * C * P;
  CHECK((F - ref).norm() <= 1e-10 * ref.norm());
}

TEST_CASE("dense RK4 reference") {
  // Scalar: p' = q - p^2 / nu  ->  sqrt(q nu).
  const RiccatiParams scalar(LinOpA::zero(1), SymOp::diagonal(Vec::Constant(1, 3.0)), sparse_identity(1),
                             Vec(Vec::Constant(1, 2.0)));
  const auto tr = integrate_dense_riccati(Mat::Constant(1, 1, 0.1), scalar, IntegratorConfig{0.01, 20.0, 100, {}});
  CHECK(tr.states.back()(0, 0) == doctest::Approx(std::sqrt(6.0)).epsilon(1e-9));

  const Index d = 8;
  const auto br = integrate_dense_riccati(Mat::Identity(d, d) * 0.2, brownian_params(d, 4.0, 1.0),
                                          IntegratorConfig{0.01, 20.0, 100, {}});
  CHECK((br.states.back() - 2.0 * Mat::Identity(d, d)).norm() <= 1e-8);
  CHECK(br.min_eigenvalue >= -1e-10);

  Rng rng(4);
  const RiccatiParams prm = testing::random_riccati_params(10, 3, rng, 1);
  const Mat P0 = random_spd(10, rng);
  const Mat ref = integrate_dense_riccati(P0, prm, IntegratorConfig{2.5e-4, 1.0, 100000, {}}).states.back();
  std::vector<double> hs, errs;
  for (double h : {0.02, 0.01, 0.005}) {
    hs.push_back(h);
    errs.push_back((integrate_dense_riccati(P0, prm, IntegratorConfig{h, 1.0, 100000, {}}).states.back() - ref).norm());
  }
  CHECK(testing::loglog_slope(hs, errs) == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("low-rank Riccati examples") {
  const Index d = 15, p = 3;
  const double lambda = 2.0, nu = 0.5;
  Rng rng(5);
  const Stiefel U = random_stiefel(d, p, rng);
  const SpdSmall R(random_spd(p, rng));
  const TangentDelta t = lowrank_riccati_delta(U, R, brownian_params(d, lambda, nu));
  CHECK(t.dU.norm() <= 1e-13);
  const Mat expect = lambda * Mat::Identity(p, p) - R.matrix() * R.matrix() / nu;
  CHECK((t.dR.matrix() - expect).norm() <= 1e-12);

  // A = -M^{-1}, Q = 2 eps I: the subspace moves along minus the Oja flow of M^{-1}.
  Vec minv(d);
  for (Index i = 0; i < d; ++i) minv[i] = 1.0 / (1.0 + static_cast<double>(i));
  const RiccatiParams vi(LinOpA::diagonal(-minv), SymOp::diagonal(Vec::Constant(d, 0.2)), SparseMat(0, d), Vec());
  const TangentDelta tv = lowrank_riccati_delta(U, R, vi);
  const Mat oja = detail::project_out(U.matrix(), minv.asDiagonal() * U.matrix());
  CHECK((tv.dU + oja).norm() <= 1e-13);
}

TEST_CASE("PPCA Riccati examples") {
  const Index d = 15, p = 3;
  Rng rng(6);
  const Stiefel U = random_stiefel(d, p, rng);
  for (auto [lambda, nu] : {std::pair{1.0, 1.0}, std::pair{4.0, 1.0}, std::pair{1.0, 4.0}}) {
    const double r = std::sqrt(lambda * nu);
    const TangentDelta t =
        ppca_riccati_delta(U, SpdSmall(r * Mat::Identity(p, p)), r, brownian_params(d, lambda, nu));
    CHECK(std::abs(t.ds()) <= 1e-12);
    CHECK(t.dU.norm() <= 1e-12);
    CHECK(t.dR.matrix().norm() <= 1e-12);
  }
  const RiccatiParams none(LinOpA::zero(d), SymOp::zero(d), SparseMat(0, d), Vec());
  const TangentDelta z = ppca_riccati_delta(U, SpdSmall(random_spd(p, rng)), 0.3, none);
  CHECK(z.ds() == 0.0);
  CHECK(z.dU.norm() == 0.0);
  CHECK(z.dR.matrix().norm() == 0.0);
}

TEST_CASE("FA Riccati examples") {
  const Index d = 16, p = 3;
  Rng rng(7);
  const Stiefel U = random_stiefel(d, p, rng);
  const Mat R = random_spd(p, rng);
  const double s = 0.4;
  const RiccatiParams iso = brownian_params(d, 1.5, 0.7);
  const TangentDelta fa = fa_riccati_delta(U, SpdSmall(R), DiagPos(Vec::Constant(d, s)), iso);
  // Same matrix in PPCA form: U (R + sI) U^T + s (I - UU^T).
  const TangentDelta pp = ppca_riccati_delta(U, SpdSmall(R + s * Mat::Identity(p, p)), s, iso);
  CHECK((fa.dpsi().array() - pp.ds()).abs().maxCoeff() <= 1e-9);

  const RiccatiParams none(LinOpA::zero(d), SymOp::zero(d), SparseMat(0, d), Vec());
  const TangentDelta z = fa_riccati_delta(U, SpdSmall(R), DiagPos(Vec::Constant(d, s)), none);
  CHECK(z.dpsi().norm() == 0.0);
  CHECK(z.dU.norm() == 0.0);
  CHECK(z.dR.matrix().norm() == 0.0);
}

TEST_CASE("property: direct deltas equal the generic projector of the dense field") {
  Rng rng(8);
  for (Kind kind : kAllKinds) {
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const FactoredPsd Y = testing::random_factored(kind, 20, 3, rng);
      const RiccatiParams prm = testing::random_riccati_params(20, 1 + trial % 6, rng, trial);
      const Mat direct = tangent_to_dense(Y, riccati_delta(Y, prm));
      const Mat oracle = tangent_to_dense(Y, testing::projected_dense_field(Y, prm));
      worst = std::max(worst, (direct - oracle).norm() / std::max(1.0, oracle.norm()));
    }
    CHECK_MESSAGE(worst <= 1e-8, kind_name(kind));
  }
}

TEST_CASE("Riccati deltas at large d allocate no d x d buffer") {
  const Index d = 100000, p = 4, k = 6;
  Rng rng(9);
  std::vector<Eigen::Triplet<double>> entries;
  for (Index r = 0; r < k; ++r) entries.emplace_back(r, 17 * r + 3, 1.0);
  SparseMat C(k, d);
  C.setFromTriplets(entries.begin(), entries.end());
  const RiccatiParams prm(LinOpA::outer(standard_normal(d, 2, rng) / 300.0, standard_normal(d, 2, rng)),
                          SymOp::diagonal(Vec::Ones(d)), std::move(C), Vec(Vec::Constant(k, 2.0)));
  for (Kind kind : kAllKinds) {
    const FactoredPsd Y = testing::random_factored(kind, d, p, rng);
    alloc_probe::reset();
    const TangentDelta t = riccati_delta(Y, prm);
    CHECK_MESSAGE(alloc_probe::largest_request_since_reset() <= static_cast<std::size_t>(d) * 32 * sizeof(double),
                  kind_name(kind));
    CHECK(t.dU.allFinite());
  }
}
