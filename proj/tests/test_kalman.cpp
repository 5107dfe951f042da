#include <doctest.h>

#include <Eigen/LU>

#include "lrdiag/kalman.hpp"
#include "support/oracles.hpp"

using namespace lrdiag;

TEST_CASE("swarm scenario construction") {
  const SwarmScenario big = make_swarm_scenario(100, 3);
  CHECK(big.dim() == 200);
  CHECK(big.params_at(0).obs_dim() == 202);
  std::vector<int> seen(100, 0);
  for (const auto& [i, j] : big.visibility) {
    CHECK(i != j);
    ++seen[static_cast<std::size_t>(i)];
  }
  for (int c : seen) CHECK(c == 1);
  CHECK(big.q_diag.minCoeff() >= 0.5);
  CHECK(big.q_diag.maxCoeff() <= 1.5);

  // Two agents: each sees the other; the queen (agent 0) also has GPS.
  const SwarmScenario two = make_swarm_scenario(2, 11);
  const Mat C = Mat(two.params_at(0).C());
  Mat expect(6, 4);
  expect << -1, 0, 1, 0,   //
      0, -1, 0, 1,         //
      1, 0, -1, 0,         //
      0, 1, 0, -1,         //
      1, 0, 0, 0,          //
      0, 1, 0, 0;
  CHECK(C == expect);

  const SwarmScenario again = make_swarm_scenario(100, 3);
  CHECK(again.visibility == big.visibility);
  CHECK(again.q_diag == big.q_diag);
  CHECK(make_swarm_scenario(100, 4).visibility != big.visibility);
  CHECK_THROWS_AS(make_swarm_scenario(1, 3), Error);
}

TEST_CASE("time-varying visibility graph") {
  SwarmScenario sc = make_swarm_scenario(10, 5);
  sc.regraph_every = 50;
  CHECK(sc.graph_at(49) == sc.visibility);
  CHECK(sc.graph_at(50) == sc.graph_at(99));
  CHECK(sc.graph_at(50) != sc.visibility);
}

TEST_CASE("truth simulation") {
  SwarmScenario sc = make_swarm_scenario(5, 1);
  SimConfig cfg{0.01, 1.0, true, 1.0};
  Rng rng(1);
  const TruthStream still = simulate_truth(sc, cfg, rng);
  for (Index s = 0; s <= still.steps(); ++s) CHECK(still.X.col(s) == still.X.col(0));

  Vec v(10);
  for (Index i = 0; i < 10; ++i) v[i] = 0.1 * static_cast<double>(i) - 0.3;
  sc.control = [v](double) { return v; };
  const TruthStream line = simulate_truth(sc, cfg, rng);
  const SparseMat C = sc.measurement_matrix(sc.visibility);
  for (Index s = 0; s < line.steps(); ++s) {
    CHECK((line.X.col(s) - (line.X.col(0) + static_cast<double>(s) * 0.01 * v)).norm() <= 1e-12);
    CHECK((line.dY.col(s) - C * line.X.col(s) * 0.01).norm() <= 1e-15);
  }

  sc.control = {};
  const TruthStream noisy = simulate_truth(sc, SimConfig{0.01, 100.0, false, 1.0}, rng);
  const Mat inc = noisy.X.rightCols(noisy.steps()) - noisy.X.leftCols(noisy.steps());
  const Vec var = inc.rowwise().squaredNorm() / static_cast<double>(noisy.steps());
  for (Index i = 0; i < 10; ++i) CHECK(std::abs(var[i] / (sc.q_diag[i] * 0.01) - 1.0) <= 0.1);
}

TEST_CASE("Kalman gain application") {
  const Index d = 12, p = 3;
  const double nu = 2.5;
  Rng rng(2);
  const RiccatiParams prm = brownian_params(d, 1.0, nu);
  const Vec innov = standard_normal(d, 1, rng);
  const FactoredPsd I = make_factored(Kind::Ppca, random_stiefel(d, p, rng).matrix(), Mat::Identity(p, p), 1.0);
  CHECK((kalman_gain_apply(I, prm, innov) - innov / nu).norm() <= 1e-14);

  const FactoredPsd lr = testing::random_factored(Kind::LowRank, d, p, rng);
  const Vec perp = detail::project_out(lr.U().matrix(), innov);
  CHECK(kalman_gain_apply(lr, prm, perp).norm() <= 1e-13);

  const SwarmScenario sc = make_swarm_scenario(6, 9);
  const RiccatiParams sp = sc.params_at(0);
  const Vec y = standard_normal(sp.obs_dim(), 1, rng);
  for (Kind kind : {Kind::LowRank, Kind::Ppca, Kind::Fa}) {
    const FactoredPsd P = testing::random_factored(kind, 12, 3, rng);
    const Mat Pd = densify(P);
    const Vec ref = Pd * Mat(sp.C()).transpose() * sp.N().inverse() * y;
    CHECK((kalman_gain_apply(P, sp, y) - ref).norm() <= 1e-10 * (1.0 + ref.norm()));
    CHECK((kalman_gain_apply(Pd, sp, y) - ref).norm() <= 1e-10 * (1.0 + ref.norm()));
  }
}

TEST_CASE("full filter with exact initial state and no noise has zero error") {
  const SwarmScenario sc = make_swarm_scenario(5, 2);
  Rng rng(3);
  const TruthStream stream = simulate_truth(sc, SimConfig{0.01, 2.0, true, 1.0}, rng);
  FilterConfig cfg;
  cfg.integ = IntegratorConfig{0.01, 2.0, 10, {}};
  const FilterRun run = run_full_filter(sc, Mat::Identity(10, 10), stream.X.col(0), cfg, stream);
  for (const auto& x : run.xhat) CHECK((x - stream.X.col(0)).norm() == 0.0);
}

TEST_CASE("full filter matches a textbook Kalman-Bucy loop") {
  const SwarmScenario sc = make_swarm_scenario(5, 4);
  Rng rng(4);
  const double h = 0.01;
  const TruthStream stream = simulate_truth(sc, SimConfig{h, 1.0, false, 1.0}, rng);
  const Mat P0 = random_spd(10, rng);
  FilterConfig cfg;
  cfg.integ = IntegratorConfig{h, 1.0, 1, {}};
  const FilterRun run = run_full_filter(sc, P0, Vec::Zero(10), cfg, stream);

  const Mat C = Mat(sc.measurement_matrix(sc.visibility));
  const Mat Ninv = Mat::Identity(C.rows(), C.rows()) / sc.n_scale;
  const Mat Q = sc.q_diag.asDiagonal();
  const auto rhs = [&](const Mat& P) { return Mat(Q - P * C.transpose() * Ninv * C * P); };
  Mat P = P0;
  Vec x = Vec::Zero(10);
  double worst = 0.0;
  for (Index s = 0; s < stream.steps(); ++s) {
    const Mat K = P * C.transpose() * Ninv;
    x = x + K * (stream.dY.col(s) - C * x * h);
    const Mat k1 = rhs(P), k2 = rhs(P + 0.5 * h * k1), k3 = rhs(P + 0.5 * h * k2), k4 = rhs(P + h * k3);
    P = P + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    const auto i = static_cast<std::size_t>(s + 1);
    worst = std::max({worst, (run.xhat[i] - x).norm(), (run.cov[i] - P).norm()});
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("factored filters keep their invariants and are deterministic") {
  SwarmConfig cfg;
  cfg.n_agents = 10;
  cfg.p = 4;
  cfg.filter.integ = IntegratorConfig{0.01, 1.0, 10, {}};
  const SwarmResult a = run_swarm(cfg, 7);
  const SwarmResult b = run_swarm(cfg, 7);
  REQUIRE(a.rows.size() == 11);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    for (int v = 0; v < 3; ++v) {
      CHECK(a.rows[i].covdist[v] == b.rows[i].covdist[v]);
      CHECK(a.rows[i].err_state[v] == b.rows[i].err_state[v]);
      CHECK(a.rows[i].residual[v] >= 0.0);
    }
  }
  CHECK(a.rows.front().covdist[0] <= 1e-5);  // common starting point
  CHECK(a.diag.invariant_checks == 300);
  CHECK(a.diag.invariant_violations == 0);
}

TEST_CASE("error moment block propagation matches a dense Lyapunov oracle") {
  const Index d = 12, p = 3;
  const double lambda = 1.7, nu = 0.6, h = 0.01;
  Rng rng(5);
  const Mat U = random_stiefel(d, p, rng).matrix();
  const Mat G = random_spd(p, rng);
  for (double g : {0.0, 0.8}) {
    const Mat K = U * G * U.transpose() + g * (Mat::Identity(d, d) - U * U.transpose());
    const auto rhs = [&](const Mat& S) {
      return Mat(-K * S - S * K.transpose() + lambda * Mat::Identity(d, d) + nu * K * K.transpose());
    };
    Mat S = Mat::Zero(d, d);
    ErrorMoment m{Mat::Zero(p, p), 0.0};
    for (int s = 0; s < 300; ++s) {
      S = rk4_step(rhs, S, h);
      m = error_moment_step(m, G, g, lambda, nu, h);
    }
    CHECK(m.total(d) == doctest::Approx(S.trace()).epsilon(1e-12));
    CHECK((U * m.sigma_span * U.transpose() + m.sigma_perp * (Mat::Identity(d, d) - U * U.transpose()) - S).norm() <=
          1e-10 * S.norm());
  }
}

TEST_CASE("Brownian experiment") {
  BrownianConfig cfg;
  cfg.d = 30;
  cfg.p = 4;
  cfg.integ = IntegratorConfig{0.01, 10.0, 100, {}};
  cfg.err_t_end = 40.0;
  const BrownianReport r = brownian_experiment(cfg, 1);
  CHECK(std::abs(r.s_ppca - 1.0) <= 1e-3);
  CHECK((r.R_ppca - Mat::Identity(4, 4)).norm() <= 1e-3);
  CHECK((r.R_lowrank - Mat::Identity(4, 4)).norm() <= 1e-3);
  CHECK(r.udot_lowrank <= 1e-12);
  CHECK(r.growth_rate_lowrank >= (30 - 4) * 1.0 * (1 - 1e-6));
  CHECK(std::abs(r.plateau_ppca / r.plateau_theory - 1.0) <= 0.01);
  CHECK(r.diag.invariant_violations == 0);
  // Steady-state PPCA gain equals the full steady-state gain sqrt(lambda/nu) I.
  CHECK(std::abs(r.s_ppca / cfg.nu - 1.0) <= 1e-3);

  cfg.lambda = 4.0;
  const BrownianReport r4 = brownian_experiment(cfg, 1);
  CHECK(std::abs(r4.s_ppca - 2.0) <= 1e-3);
  CHECK(std::abs(r4.plateau_ppca / (2.0 * 30) - 1.0) <= 0.01);
}
