#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "lrdiag/factored.hpp"
#include "support/oracles.hpp"

using namespace lrdiag;
using lrdiag::testing::random_factored;

namespace {

Mat first_columns(Index d, Index p) { return Mat::Identity(d, p); }

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an lrdiag::Error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("make_factored validates its inputs") {
  SUBCASE("PPCA identity") {
    const auto Y = make_factored(Kind::Ppca, first_columns(5, 2), Mat::Identity(2, 2), 1.0);
    CHECK((densify(Y) - Mat::Identity(5, 5)).norm() == 0.0);
  }
  SUBCASE("FA with a zero diagonal entry") {
    Vec psi = Vec::Ones(4);
    psi[2] = 0.0;
    CHECK(code_of([&] { make_factored(Kind::Fa, first_columns(4, 1), Mat::Identity(1, 1), psi); }) ==
          ErrorCode::NonPositiveDiagonal);
  }
  SUBCASE("U^T U = 2I is rejected, not repaired") {
    CHECK(code_of([&] { make_factored(Kind::LowRank, std::sqrt(2.0) * first_columns(4, 2), Mat::Identity(2, 2)); }) ==
          ErrorCode::NotOrthonormal);
  }
  SUBCASE("indefinite R") {
    Mat R = Mat::Identity(2, 2);
    R(1, 1) = -1.0;
    CHECK(code_of([&] { make_factored(Kind::LowRank, first_columns(4, 2), R); }) == ErrorCode::NotPd);
  }
  SUBCASE("dimension errors") {
    CHECK(code_of([&] { make_factored(Kind::LowRank, first_columns(4, 2), Mat::Identity(3, 3)); }) ==
          ErrorCode::DimensionMismatch);
    CHECK(code_of([&] { make_factored(Kind::Fa, first_columns(4, 2), Mat::Identity(2, 2), Vec(Vec::Ones(3))); }) ==
          ErrorCode::DimensionMismatch);
    CHECK(code_of([&] { make_factored(Kind::LowRank, first_columns(3, 3), Mat::Identity(3, 3)); }) ==
          ErrorCode::DimensionMismatch);
  }
  SUBCASE("R is re-symmetrized") {
    Mat R = Mat::Identity(2, 2);
    R(0, 1) = 0.25;
    const auto Y = make_factored(Kind::LowRank, first_columns(4, 2), R);
    CHECK(Y.R().matrix()(0, 1) == doctest::Approx(0.125));
    CHECK(Y.R().matrix()(1, 0) == doctest::Approx(0.125));
  }
  SUBCASE("variant accessors") {
    const auto Y = make_factored(Kind::LowRank, first_columns(4, 2), Mat::Identity(2, 2));
    CHECK(code_of([&] { (void)Y.s(); }) == ErrorCode::MismatchedVariant);
    CHECK(code_of([&] { (void)Y.psi(); }) == ErrorCode::MismatchedVariant);
  }
}

TEST_CASE("orthonormalize is the explicit repair path") {
  Rng rng(3);
  const Mat A = standard_normal(30, 4, rng);
  const Stiefel U = Stiefel::orthonormalize(A);
  CHECK(U.orth_error() < 1e-13);
  for (Index j = 0; j < 4; ++j) CHECK(U.matrix().col(j).dot(A.col(j)) > 0.0);
  Mat deficient = A;
  deficient.col(3) = deficient.col(1);
  CHECK(code_of([&] { Stiefel::orthonormalize(deficient); }) == ErrorCode::RankDeficient);
}

TEST_CASE("densify small cases") {
  Mat e1 = Mat::Zero(2, 1);
  e1(0, 0) = 1.0;
  const auto ppca = make_factored(Kind::Ppca, e1, Mat::Constant(1, 1, 2.0), 1.0);
  Mat expect(2, 2);
  expect << 2, 0, 0, 1;
  CHECK((densify(ppca) - expect).norm() == 0.0);

  const auto lr = make_factored(Kind::LowRank, e1, Mat::Constant(1, 1, 3.0));
  expect << 3, 0, 0, 0;
  CHECK((densify(lr) - expect).norm() == 0.0);

  Tolerances tol;
  tol.max_dense = 10;
  Rng rng(1);
  const auto big = random_factored(Kind::Fa, 11, 2, rng);
  CHECK(code_of([&] { densify(big, tol); }) == ErrorCode::TooLargeToDensify);
}

TEST_CASE("FA eigenvalues are bounded below by min(psi)") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const auto Y = random_factored(Kind::Fa, 20, 3, rng);
    const Vec eig = Eigen::SelfAdjointEigenSolver<Mat>(densify(Y)).eigenvalues();
    CHECK(eig.minCoeff() >= Y.psi().values().minCoeff() - 1e-12);
  }
}

TEST_CASE("both PPCA formulas agree") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto Y = random_factored(Kind::Ppca, 15, 4, rng);
    const Mat& U = Y.U().matrix();
    const Mat& R = Y.R().matrix();
    const Mat a = U * R * U.transpose() + Y.s() * (Mat::Identity(15, 15) - U * U.transpose());
    CHECK((densify(Y) - a).norm() <= 1e-12);
  }
}

TEST_CASE("apply matches the dense product and its structural cases") {
  Rng rng(17);
  SUBCASE("PPCA identity") {
    const auto Y = make_factored(Kind::Ppca, random_stiefel(12, 3, rng).matrix(), Mat::Identity(3, 3), 1.0);
    const Mat v = standard_normal(12, 1, rng);
    CHECK((apply(Y, v) - v).norm() <= 1e-14);
  }
  SUBCASE("low-rank null space") {
    const auto Y = random_factored(Kind::LowRank, 12, 3, rng);
    const Mat& U = Y.U().matrix();
    Mat v = standard_normal(12, 1, rng);
    v -= U * (U.transpose() * v);
    CHECK(apply(Y, v).norm() <= 1e-13);
  }
  SUBCASE("all variants vs densify") {
    for (Kind k : {Kind::LowRank, Kind::Ppca, Kind::Fa}) {
      const auto Y = random_factored(k, 30, 4, rng);
      const Mat X = standard_normal(30, 3, rng);
      CHECK((apply(Y, X) - densify(Y) * X).norm() <= 1e-12);
    }
  }
  SUBCASE("quadratic form is non-negative") {
    for (Kind k : {Kind::LowRank, Kind::Ppca, Kind::Fa})
      for (int t = 0; t < 20; ++t) {
        const auto Y = random_factored(k, 10, 2, rng);
        Vec v = standard_normal(10, 1, rng).col(0);
        v.normalize();
        CHECK(v.dot(apply(Y, v).col(0)) >= -1e-14);
        if (k == Kind::Ppca) {
          const Mat& R = Y.R().matrix();
          const double rmin = Eigen::SelfAdjointEigenSolver<Mat>(R).eigenvalues().minCoeff();
          CHECK(v.dot(apply(Y, v).col(0)) >= std::min(rmin, Y.s()) - 1e-12);
        }
      }
  }
  SUBCASE("dimension mismatch") {
    const auto Y = random_factored(Kind::Fa, 8, 2, rng);
    CHECK(code_of([&] { apply(Y, Mat::Zero(7, 1)); }) == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("woodbury_solve") {
  Rng rng(23);
  SUBCASE("diagonal FA example") {
    Mat e1 = Mat::Zero(3, 1);
    e1(0, 0) = 1.0;
    const auto Y = make_factored(Kind::Fa, e1, Mat::Identity(1, 1), Vec(Vec::Ones(3)));
    const Vec x = woodbury_solve(Y, Vec::Constant(3, 2.0));
    CHECK((x - Vec((Vec(3) << 1, 2, 2).finished())).norm() <= 1e-14);
  }
  SUBCASE("PPCA identity") {
    const auto Y = make_factored(Kind::Ppca, random_stiefel(9, 2, rng).matrix(), Mat::Identity(2, 2), 1.0);
    const Mat B = standard_normal(9, 2, rng);
    CHECK((woodbury_solve(Y, B) - B).norm() <= 1e-14);
  }
  SUBCASE("random FA vs dense LU") {
    const auto Y = random_factored(Kind::Fa, 50, 5, rng);
    const Mat B = standard_normal(50, 3, rng);
    const Mat ref = densify(Y).partialPivLu().solve(B);
    CHECK((woodbury_solve(Y, B) - ref).norm() <= 1e-10 * ref.norm());
  }
  SUBCASE("solve then apply round trip, d up to 200") {
    for (Kind k : {Kind::Ppca, Kind::Fa})
      for (Index d : {20, 80, 200}) {
        const auto Y = random_factored(k, d, 6, rng);
        const Mat B = standard_normal(d, 2, rng);
        CHECK((apply(Y, woodbury_solve(Y, B)) - B).norm() <= 1e-9 * B.norm());
      }
  }
  SUBCASE("low-rank is not invertible") {
    const auto Y = random_factored(Kind::LowRank, 10, 2, rng);
    CHECK(code_of([&] { woodbury_solve(Y, Mat::Zero(10, 1)); }) == ErrorCode::NotInvertible);
  }
}

TEST_CASE("PPCA sampler") {
  SUBCASE("degenerate direction as s -> 0") {
    Mat e1 = Mat::Zero(6, 1);
    e1(0, 0) = 1.0;
    const double s = 1e-10;
    const auto Y = make_factored(Kind::Ppca, e1, Mat::Identity(1, 1), s);
    Rng rng(2);
    const Mat X = sample_ppca_gaussian(Vec::Zero(6), Y, 500, rng);
    CHECK(X.bottomRows(5).cwiseAbs().maxCoeff() <= 10.0 * std::sqrt(s));
    CHECK(X.row(0).cwiseAbs().maxCoeff() > 0.1);
  }
  SUBCASE("empirical mean within 5 sigma / sqrt(n)") {
    Rng rng(9);
    const auto Y = random_factored(Kind::Ppca, 20, 3, rng);
    const Vec m = standard_normal(20, 1, rng).col(0);
    const Index n = 100000;
    const Mat X = sample_ppca_gaussian(m, Y, n, rng);
    const Vec mean = X.rowwise().mean();
    const Vec sd = densify(Y).diagonal().cwiseSqrt();
    for (Index k = 0; k < 20; ++k) CHECK(std::abs(mean[k] - m[k]) <= 5.0 * sd[k] / std::sqrt(double(n)));
  }
  SUBCASE("variant check") {
    Rng rng(1);
    const auto Y = random_factored(Kind::Fa, 8, 2, rng);
    CHECK(code_of([&] { sample_ppca_gaussian(Vec::Zero(8), Y, 3, rng); }) == ErrorCode::MismatchedVariant);
  }
  SUBCASE("seeded determinism") {
    Rng c(42);
    const auto Y = random_factored(Kind::Ppca, 10, 2, c);
    Rng g1(5), g2(5);
    CHECK(sample_ppca_gaussian(Vec::Zero(10), Y, 7, g1) == sample_ppca_gaussian(Vec::Zero(10), Y, 7, g2));
  }
}
