#pragma once

// Kalman-Bucy filtering with factored covariances: the swarm tracking
// scenario, a filter bank over the covariance forms, and the Brownian-motion
// analysis of steady-state gains.

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "lrdiag/riccati.hpp"

namespace lrdiag {

// ---------------------------------------------------------------- swarm scenario

/// Agents move in the plane: X_i occupies state entries (2i, 2i+1), so d = 2 n.
/// Agent i measures X_j - X_i for its one neighbor j; the queen also measures
/// its own position.
struct SwarmScenario {
  Index n_agents = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<Index, Index>> visibility;  // (observer, observed), one per agent
  Index queen = 0;
  Vec q_diag;
  double n_scale = 2.0;
  /// Steps between redraws of the visibility graph; 0 keeps it fixed.
  Index regraph_every = 0;
  /// Control velocity u(t) (d-vector); empty means zero.
  std::function<Vec(double)> control;

  Index dim() const { return 2 * n_agents; }
  Index obs_dim() const { return 2 * n_agents + 2; }

  /// Graph used during the given step (equals `visibility` when fixed).
  std::vector<std::pair<Index, Index>> graph_at(Index step) const;
  /// Sparse measurement matrix for a graph: two relative rows per pair plus two queen rows.
  SparseMat measurement_matrix(const std::vector<std::pair<Index, Index>>& graph) const;
  /// A = 0, Q = diag(q_diag), C from graph_at(step), N = n_scale I.
  RiccatiParams params_at(Index step) const;
  Vec control_at(double t) const;
};

SwarmScenario make_swarm_scenario(Index n_agents, std::uint64_t seed, double q_dispersion = 0.5,
                                  double n_scale = 2.0);

struct SimConfig {
  double h = 0.01;
  double t_end = 10.0;
  bool noise_free = false;
  double x0_scale = 1.0;  // initial positions ~ N(0, x0_scale^2)
};

/// Truth trajectory and measurement increments dy_k = C X_k h + dv_k.
struct TruthStream {
  double h = 0.0;
  Mat X;   // d x (steps + 1)
  Mat dY;  // k x steps
  Index steps() const { return dY.cols(); }
};

TruthStream simulate_truth(const SwarmScenario& sc, const SimConfig& cfg, Rng& rng);

// ---------------------------------------------------------------- filtering

/// P C^T N^{-1} innovation using factored products.
Vec kalman_gain_apply(const FactoredPsd& P, const RiccatiParams& params, const Vec& innovation);
Vec kalman_gain_apply(const Mat& P, const RiccatiParams& params, const Vec& innovation);

enum class FilterVariant { Full, LowRank, Ppca, Fa };
const char* variant_name(FilterVariant v);

struct FilterConfig {
  IntegratorConfig integ;
  double s0 = 1e-6;    // PPCA complement variance at start
  double psi0 = 1e-6;  // FA diagonal at start
  bool monitor_residual = true;
};

/// One Kalman-Bucy filter: estimate plus covariance in the chosen form.
/// Each step uses dX = u dt + K (dy - C X dt) with K = P C^T N^{-1}; the
/// covariance moves by RK4 (Full) or by a retracted Euler step of the
/// matching Riccati field (factored forms).
class KalmanBucyFilter {
 public:
  KalmanBucyFilter(FilterVariant variant, const FactoredPsd& P0, Vec xhat0, const FilterConfig& cfg);
  KalmanBucyFilter(const Mat& P0, Vec xhat0, const FilterConfig& cfg);

  void step(const RiccatiParams& params, const Vec& dy, const Vec& u, double h);

  FilterVariant variant() const { return variant_; }
  const Vec& xhat() const { return xhat_; }
  Mat dense_cov() const;
  const FactoredPsd* factored() const { return factored_ ? &*factored_ : nullptr; }
  /// ||F(P) - projected F||^2 / ||F(P)||^2, densely evaluated (0 for Full, NaN if d is too large).
  double residual(const RiccatiParams& params) const;
  const Diagnostics& diagnostics() const { return diag_; }

 private:
  FilterVariant variant_;
  FilterConfig cfg_;
  Vec xhat_;
  std::optional<FactoredPsd> factored_;
  Mat dense_;
  Diagnostics diag_;
};

struct FilterRun {
  FilterVariant variant = FilterVariant::Full;
  std::vector<double> times;
  std::vector<Vec> xhat;
  std::vector<Mat> cov;          // dense covariance at recorded steps
  std::vector<double> residual;  // ||F(P) - projected field||^2 / ||F(P)||^2 (0 for Full)
  Diagnostics diag;
};

/// Runs one filter on a measurement stream. Low-rank-derived variants start
/// from P0 (PPCA with s0, FA with psi0 * 1); Full starts from densify(P0).
FilterRun run_filter(const SwarmScenario& sc, FilterVariant variant, const FactoredPsd& P0, const Vec& xhat0,
                     const FilterConfig& cfg, const TruthStream& stream);

/// Full-KF run from a dense initial covariance.
FilterRun run_full_filter(const SwarmScenario& sc, const Mat& P0, const Vec& xhat0, const FilterConfig& cfg,
                          const TruthStream& stream);

struct SwarmRow {
  double t;
  double err_state[3];  // ||xhat_v - xhat_full||, v = lowrank, ppca, fa
  double covdist[3];    // ||P_v - P_full||_F / ||P_full||_F
  double covfro[3];     // ||P_v - P_full||_F
  double residual[3];
  std::uint64_t clamp_count;
  std::uint64_t fallback_count;
};

struct SwarmResult {
  std::vector<SwarmRow> rows;
  Diagnostics diag;  // summed over the factored variants
  double mean_covdist[3] = {0, 0, 0};
  double mean_err_state[3] = {0, 0, 0};
};

struct SwarmConfig {
  Index n_agents = 100;
  Index p = 8;
  double q_dispersion = 0.5;
  double n_scale = 2.0;
  Index regraph_every = 0;
  double r0 = 2.0;  // P0 = U (r0 I) U^T
  SimConfig sim;
  FilterConfig filter;
};

/// Scenario + truth + full KF + the three factored filters on one stream.
SwarmResult run_swarm(const SwarmConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------- Brownian analysis

struct BrownianConfig {
  Index d = 50;
  Index p = 5;
  double lambda = 1.0;
  double nu = 1.0;
  IntegratorConfig integ;     // Riccati flow to steady state
  double err_t_end = 50.0;    // horizon of the error-moment propagation
  double err_h = 0.01;
  double r0 = 2.0;
  double s0 = 0.5;
};

struct BrownianRow {
  double t;
  double s_ppca;
  double rdist_ppca;     // ||R - sqrt(lambda nu) I||_F
  double rdist_lowrank;
  double udot_lowrank;   // ||dU||_F of the low-rank field
  double udot_ppca;
};

struct ErrorMomentRow {
  double t;
  double err_lowrank;  // E||X - Xhat||^2
  double err_ppca;
};

struct BrownianReport {
  Mat R_lowrank, R_ppca;
  double s_ppca = 0.0;
  double udot_lowrank = 0.0;
  std::vector<BrownianRow> rows;
  std::vector<ErrorMomentRow> error_rows;
  double growth_rate_lowrank = 0.0;  // d/dt E||e||^2 at the horizon
  double plateau_ppca = 0.0;         // E||e||^2 at the horizon
  double plateau_theory = 0.0;       // d sqrt(lambda nu)
  Diagnostics diag;
};

/// Second moment of the estimation error under a fixed gain K = U G U^T + g (I - UU^T)
/// with Sigma(0) = 0, A = 0, C = I, Q = lambda I, N = nu I:
///   dSigma/dt = -K Sigma - Sigma K^T + lambda I + nu K K^T,
/// propagated exactly in the (span U, complement) block decomposition.
struct ErrorMoment {
  Mat sigma_span;  // p x p
  double sigma_perp;
  double total(Index d) const { return sigma_span.trace() + static_cast<double>(d - sigma_span.rows()) * sigma_perp; }
};
ErrorMoment error_moment_step(const ErrorMoment& m, const Mat& G, double g, double lambda, double nu, double h);

BrownianReport brownian_experiment(const BrownianConfig& cfg, std::uint64_t seed);

}  // namespace lrdiag
