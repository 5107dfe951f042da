#include "lrdiag/kalman.hpp"

#include <cmath>
#include <limits>
#include <map>

namespace lrdiag {

namespace {

std::vector<std::pair<Index, Index>> draw_graph(Index n, Rng& rng) {
  std::vector<std::pair<Index, Index>> g;
  g.reserve(static_cast<std::size_t>(n));
  std::uniform_int_distribution<Index> other(0, n - 2);
  for (Index i = 0; i < n; ++i) {
    Index j = other(rng);
    if (j >= i) ++j;
    g.emplace_back(i, j);
  }
  return g;
}

FactoredPsd lift(FilterVariant v, const FactoredPsd& P0, const FilterConfig& cfg) {
  const Mat& U = P0.U().matrix();
  const Mat& R = P0.R().matrix();
  switch (v) {
    case FilterVariant::LowRank: return make_factored(Kind::LowRank, U, R);
    case FilterVariant::Ppca: return make_factored(Kind::Ppca, U, R, cfg.s0);
    case FilterVariant::Fa: return make_factored(Kind::Fa, U, R, Vec(Vec::Constant(P0.dim(), cfg.psi0)));
    case FilterVariant::Full: break;
  }
  throw Error(ErrorCode::MismatchedVariant, "the full filter takes a dense covariance");
}

// RiccatiParams for each visibility epoch, built once.
class ParamsCache {
 public:
  explicit ParamsCache(const SwarmScenario& sc) : sc_(sc) {}
  const RiccatiParams& at(Index step) {
    const Index epoch = sc_.regraph_every > 0 ? step / sc_.regraph_every : 0;
    auto it = cache_.find(epoch);
    if (it == cache_.end()) it = cache_.emplace(epoch, sc_.params_at(step)).first;
    return it->second;
  }

 private:
  const SwarmScenario& sc_;
  std::map<Index, RiccatiParams> cache_;
};

}  // namespace

// ---------------------------------------------------------------- scenario

std::vector<std::pair<Index, Index>> SwarmScenario::graph_at(Index step) const {
  if (regraph_every <= 0 || step < regraph_every) return visibility;
  const auto epoch = static_cast<std::uint64_t>(step / regraph_every);
  Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * epoch));
  return draw_graph(n_agents, rng);
}

SparseMat SwarmScenario::measurement_matrix(const std::vector<std::pair<Index, Index>>& graph) const {
  const Index d = dim();
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(graph.size() * 4 + 2);
  Index row = 0;
  for (const auto& [i, j] : graph) {
    for (Index c = 0; c < 2; ++c, ++row) {
      entries.emplace_back(row, 2 * j + c, 1.0);
      entries.emplace_back(row, 2 * i + c, -1.0);
    }
  }
  for (Index c = 0; c < 2; ++c, ++row) entries.emplace_back(row, 2 * queen + c, 1.0);
  SparseMat C(row, d);
  C.setFromTriplets(entries.begin(), entries.end());
  return C;
}

RiccatiParams SwarmScenario::params_at(Index step) const {
  const SparseMat C = measurement_matrix(graph_at(step));
  const Index k = static_cast<Index>(C.rows());
  return RiccatiParams(LinOpA::zero(dim()), SymOp::diagonal(q_diag), C, Vec(Vec::Constant(k, n_scale)));
}

Vec SwarmScenario::control_at(double t) const {
  if (!control) return Vec::Zero(dim());
  Vec u = control(t);
  require(u.size() == dim(), ErrorCode::DimensionMismatch, "control has the wrong length");
  return u;
}

SwarmScenario make_swarm_scenario(Index n_agents, std::uint64_t seed, double q_dispersion, double n_scale) {
  require(n_agents >= 2, ErrorCode::ValidationError, "a swarm needs at least two agents");
  require(q_dispersion >= 0.0 && q_dispersion < 1.0, ErrorCode::ValidationError,
          "q_dispersion must lie in [0, 1)");
  require(n_scale > 0.0, ErrorCode::ValidationError, "n_scale must be positive");
  SwarmScenario sc;
  sc.n_agents = n_agents;
  sc.seed = seed;
  sc.n_scale = n_scale;
  sc.queen = 0;
  Rng rng(seed);
  sc.visibility = draw_graph(n_agents, rng);
  std::uniform_real_distribution<double> unif(1.0 - q_dispersion, 1.0 + q_dispersion);
  sc.q_diag.resize(2 * n_agents);
  for (Index i = 0; i < sc.q_diag.size(); ++i) sc.q_diag[i] = q_dispersion == 0.0 ? 1.0 : unif(rng);
  return sc;
}

TruthStream simulate_truth(const SwarmScenario& sc, const SimConfig& cfg, Rng& rng) {
  require(cfg.h > 0.0 && cfg.t_end >= cfg.h, ErrorCode::ValidationError, "need h > 0 and t_end >= h");
  const Index d = sc.dim(), k = sc.obs_dim();
  const Index n = static_cast<Index>(std::llround(cfg.t_end / cfg.h));
  TruthStream out;
  out.h = cfg.h;
  out.X.resize(d, n + 1);
  out.dY.resize(k, n);
  out.X.col(0) = cfg.x0_scale * standard_normal(d, 1, rng);
  const Vec q_sd = (sc.q_diag * cfg.h).cwiseSqrt();
  const double v_sd = std::sqrt(sc.n_scale * cfg.h);
  SparseMat C = sc.measurement_matrix(sc.graph_at(0));
  Index epoch = 0;
  for (Index s = 0; s < n; ++s) {
    if (sc.regraph_every > 0 && s / sc.regraph_every != epoch) {
      epoch = s / sc.regraph_every;
      C = sc.measurement_matrix(sc.graph_at(s));
    }
    const double t = static_cast<double>(s) * cfg.h;
    const Vec x = out.X.col(s);
    Vec dy = C * x * cfg.h;
    Vec next = x + sc.control_at(t) * cfg.h;
    if (!cfg.noise_free) {
      next += q_sd.cwiseProduct(standard_normal(d, 1, rng));
      dy += v_sd * standard_normal(k, 1, rng);
    }
    out.X.col(s + 1) = next;
    out.dY.col(s) = dy;
  }
  return out;
}

// ---------------------------------------------------------------- gains

Vec kalman_gain_apply(const FactoredPsd& P, const RiccatiParams& params, const Vec& innovation) {
  require(innovation.size() == params.obs_dim() && P.dim() == params.dim(), ErrorCode::DimensionMismatch,
          "innovation, covariance and parameters differ in dimension");
  const Vec v = params.C().transpose() * params.solve_N(Mat(innovation));
  return apply(P, v);
}

Vec kalman_gain_apply(const Mat& P, const RiccatiParams& params, const Vec& innovation) {
  require(innovation.size() == params.obs_dim() && P.rows() == params.dim(), ErrorCode::DimensionMismatch,
          "innovation, covariance and parameters differ in dimension");
  const Vec v = params.C().transpose() * params.solve_N(Mat(innovation));
  return P * v;
}

const char* variant_name(FilterVariant v) {
  switch (v) {
    case FilterVariant::Full: return "full";
    case FilterVariant::LowRank: return "lowrank";
    case FilterVariant::Ppca: return "ppca";
    case FilterVariant::Fa: return "fa";
  }
  return "?";
}

// ---------------------------------------------------------------- filter

KalmanBucyFilter::KalmanBucyFilter(FilterVariant variant, const FactoredPsd& P0, Vec xhat0, const FilterConfig& cfg)
    : variant_(variant), cfg_(cfg), xhat_(std::move(xhat0)) {
  require(xhat_.size() == P0.dim(), ErrorCode::DimensionMismatch, "estimate and covariance differ in dimension");
  if (variant == FilterVariant::Full) dense_ = densify(P0, cfg.integ.tol);
  else factored_ = lift(variant, P0, cfg);
}

KalmanBucyFilter::KalmanBucyFilter(const Mat& P0, Vec xhat0, const FilterConfig& cfg)
    : variant_(FilterVariant::Full), cfg_(cfg), xhat_(std::move(xhat0)), dense_(0.5 * (P0 + P0.transpose())) {
  require(xhat_.size() == P0.rows() && P0.rows() == P0.cols(), ErrorCode::DimensionMismatch,
          "estimate and covariance differ in dimension");
}

Mat KalmanBucyFilter::dense_cov() const { return factored_ ? densify(*factored_, cfg_.integ.tol) : dense_; }

void KalmanBucyFilter::step(const RiccatiParams& params, const Vec& dy, const Vec& u, double h) {
  const Vec innovation = dy - params.C() * xhat_ * h;
  if (factored_) {
    const Vec gain = kalman_gain_apply(*factored_, params, innovation);
    const TangentDelta delta = riccati_delta(*factored_, params, cfg_.integ.tol, &diag_);
    try {
      factored_ = retract(*factored_, delta, h, cfg_.integ.tol, &diag_);
    } catch (const Error& e) {
      throw Error(ErrorCode::NonFiniteState, std::string(variant_name(variant_)) + " filter: " + e.what());
    }
    ++diag_.invariant_checks;
    if (!check_invariants(*factored_, cfg_.integ.tol)) ++diag_.invariant_violations;
    xhat_ += u * h + gain;
  } else {
    const Vec gain = kalman_gain_apply(dense_, params, innovation);
    const auto f = [&](const Mat& P) { return dense_riccati_rhs(P, params, cfg_.integ.tol); };
    dense_ = rk4_step(f, dense_, h);
    dense_ = (0.5 * (dense_ + dense_.transpose())).eval();
    require(dense_.allFinite(), ErrorCode::NonFiniteState, "full filter covariance became non-finite");
    xhat_ += u * h + gain;
  }
  require(xhat_.allFinite(), ErrorCode::NonFiniteState,
          std::string(variant_name(variant_)) + " filter estimate became non-finite");
}

double KalmanBucyFilter::residual(const RiccatiParams& params) const {
  if (!factored_) return 0.0;
  if (static_cast<std::size_t>(factored_->dim()) > cfg_.integ.tol.max_dense)
    return std::numeric_limits<double>::quiet_NaN();
  const Mat F = dense_riccati_rhs(densify(*factored_), params, cfg_.integ.tol);
  const Mat dY = tangent_to_dense(*factored_, riccati_delta(*factored_, params, cfg_.integ.tol));
  const double f2 = F.squaredNorm();
  return f2 > 0.0 ? (F - dY).squaredNorm() / f2 : 0.0;
}

namespace {

FilterRun drive(const SwarmScenario& sc, KalmanBucyFilter filter, const FilterConfig& cfg,
                const TruthStream& stream) {
  validate(cfg.integ);
  require(std::abs(cfg.integ.h - stream.h) <= 1e-12 * stream.h, ErrorCode::ValidationError,
          "filter step differs from the measurement step");
  ParamsCache params(sc);
  FilterRun run;
  run.variant = filter.variant();
  const Index n = std::min(cfg.integ.steps(), stream.steps());
  auto record = [&](Index step) {
    run.times.push_back(static_cast<double>(step) * stream.h);
    run.xhat.push_back(filter.xhat());
    run.cov.push_back(filter.dense_cov());
    run.residual.push_back(cfg.monitor_residual ? filter.residual(params.at(step)) : 0.0);
  };
  record(0);
  for (Index s = 0; s < n; ++s) {
    const double t = static_cast<double>(s) * stream.h;
    filter.step(params.at(s), stream.dY.col(s), sc.control_at(t), stream.h);
    if ((s + 1) % cfg.integ.record_every == 0 || s + 1 == n) record(s + 1);
  }
  run.diag = filter.diagnostics();
  return run;
}

}  // namespace

FilterRun run_filter(const SwarmScenario& sc, FilterVariant variant, const FactoredPsd& P0, const Vec& xhat0,
                     const FilterConfig& cfg, const TruthStream& stream) {
  return drive(sc, KalmanBucyFilter(variant, P0, xhat0, cfg), cfg, stream);
}

FilterRun run_full_filter(const SwarmScenario& sc, const Mat& P0, const Vec& xhat0, const FilterConfig& cfg,
                          const TruthStream& stream) {
  return drive(sc, KalmanBucyFilter(P0, xhat0, cfg), cfg, stream);
}

SwarmResult run_swarm(const SwarmConfig& cfg, std::uint64_t seed) {
  validate(cfg.filter.integ);
  SwarmScenario sc = make_swarm_scenario(cfg.n_agents, seed, cfg.q_dispersion, cfg.n_scale);
  sc.regraph_every = cfg.regraph_every;
  const Index d = sc.dim();
  require(cfg.p >= 1 && cfg.p < d, ErrorCode::ValidationError, "need 1 <= p < d");
  Rng rng(seed ^ 0xD1B54A32D192ED03ULL);
  SimConfig sim = cfg.sim;
  sim.h = cfg.filter.integ.h;
  sim.t_end = cfg.filter.integ.t_end;
  const TruthStream stream = simulate_truth(sc, sim, rng);
  const FactoredPsd P0 = make_factored(Kind::LowRank, random_stiefel(d, cfg.p, rng).matrix(),
                                       cfg.r0 * Mat::Identity(cfg.p, cfg.p));
  const Vec xhat0 = Vec::Zero(d);

  KalmanBucyFilter full(FilterVariant::Full, P0, xhat0, cfg.filter);
  std::vector<KalmanBucyFilter> bank;
  for (FilterVariant v : {FilterVariant::LowRank, FilterVariant::Ppca, FilterVariant::Fa})
    bank.emplace_back(v, P0, xhat0, cfg.filter);

  ParamsCache params(sc);
  SwarmResult out;
  auto record = [&](Index step) {
    SwarmRow row{};
    row.t = static_cast<double>(step) * stream.h;
    const Mat Pf = full.dense_cov();
    const double pf = Pf.norm();
    Diagnostics sum;
    for (std::size_t v = 0; v < 3; ++v) {
      row.err_state[v] = (bank[v].xhat() - full.xhat()).norm();
      row.covfro[v] = (bank[v].dense_cov() - Pf).norm();
      row.covdist[v] = pf > 0.0 ? row.covfro[v] / pf : row.covfro[v];
      row.residual[v] = cfg.filter.monitor_residual ? bank[v].residual(params.at(step)) : 0.0;
      sum += bank[v].diagnostics();
    }
    row.clamp_count = sum.positivity_clamps;
    row.fallback_count = sum.fallback_count();
    out.rows.push_back(row);
  };
  record(0);
  const Index n = stream.steps();
  for (Index s = 0; s < n; ++s) {
    const double t = static_cast<double>(s) * stream.h;
    const RiccatiParams& prm = params.at(s);
    const Vec u = sc.control_at(t);
    full.step(prm, stream.dY.col(s), u, stream.h);
    for (auto& f : bank) f.step(prm, stream.dY.col(s), u, stream.h);
    if ((s + 1) % cfg.filter.integ.record_every == 0 || s + 1 == n) record(s + 1);
  }
  for (const auto& f : bank) out.diag += f.diagnostics();
  for (std::size_t v = 0; v < 3; ++v) {
    double c = 0.0, e = 0.0;
    for (const auto& r : out.rows) {
      c += r.covdist[v];
      e += r.err_state[v];
    }
    out.mean_covdist[v] = c / static_cast<double>(out.rows.size());
    out.mean_err_state[v] = e / static_cast<double>(out.rows.size());
  }
  return out;
}

// ---------------------------------------------------------------- Brownian analysis

namespace {

ErrorMoment moment_rhs(const ErrorMoment& m, const Mat& G, double g, double lambda, double nu) {
  const Index p = G.rows();
  ErrorMoment r;
  r.sigma_span = -G * m.sigma_span - m.sigma_span * G.transpose() + lambda * Mat::Identity(p, p) +
                 nu * G * G.transpose();
  r.sigma_perp = -2.0 * g * m.sigma_perp + lambda + nu * g * g;
  return r;
}

ErrorMoment axpy(const ErrorMoment& a, double h, const ErrorMoment& b) {
  return {a.sigma_span + h * b.sigma_span, a.sigma_perp + h * b.sigma_perp};
}

}  // namespace

ErrorMoment error_moment_step(const ErrorMoment& m, const Mat& G, double g, double lambda, double nu, double h) {
  const ErrorMoment k1 = moment_rhs(m, G, g, lambda, nu);
  const ErrorMoment k2 = moment_rhs(axpy(m, 0.5 * h, k1), G, g, lambda, nu);
  const ErrorMoment k3 = moment_rhs(axpy(m, 0.5 * h, k2), G, g, lambda, nu);
  const ErrorMoment k4 = moment_rhs(axpy(m, h, k3), G, g, lambda, nu);
  ErrorMoment out;
  out.sigma_span = m.sigma_span + (h / 6.0) * (k1.sigma_span + 2.0 * k2.sigma_span + 2.0 * k3.sigma_span + k4.sigma_span);
  out.sigma_perp = m.sigma_perp + (h / 6.0) * (k1.sigma_perp + 2.0 * k2.sigma_perp + 2.0 * k3.sigma_perp + k4.sigma_perp);
  return out;
}

BrownianReport brownian_experiment(const BrownianConfig& cfg, std::uint64_t seed) {
  validate(cfg.integ);
  require(cfg.p >= 1 && cfg.p < cfg.d, ErrorCode::ValidationError, "need 1 <= p < d");
  require(cfg.lambda > 0.0 && cfg.nu > 0.0, ErrorCode::ValidationError, "lambda and nu must be positive");
  require(cfg.err_h > 0.0 && cfg.err_t_end >= cfg.err_h, ErrorCode::ValidationError,
          "need err_h > 0 and err_t_end >= err_h");
  const RiccatiParams params = brownian_params(cfg.d, cfg.lambda, cfg.nu);
  Rng rng(seed);
  const Mat U0 = random_stiefel(cfg.d, cfg.p, rng).matrix();
  const Mat R0 = cfg.r0 * Mat::Identity(cfg.p, cfg.p);
  FactoredPsd lr = make_factored(Kind::LowRank, U0, R0);
  FactoredPsd pp = make_factored(Kind::Ppca, U0, R0, cfg.s0);
  const double root = std::sqrt(cfg.lambda * cfg.nu);
  const Mat target = root * Mat::Identity(cfg.p, cfg.p);

  BrownianReport rep;
  const auto& tol = cfg.integ.tol;
  auto record = [&](Index step, const TangentDelta& dlr, const TangentDelta& dpp) {
    rep.rows.push_back({static_cast<double>(step) * cfg.integ.h, pp.s(), (pp.R().matrix() - target).norm(),
                        (lr.R().matrix() - target).norm(), dlr.dU.norm(), dpp.dU.norm()});
  };
  const Index n = cfg.integ.steps();
  for (Index s = 0; s <= n; ++s) {
    const TangentDelta dlr = riccati_delta(lr, params, tol, &rep.diag);
    const TangentDelta dpp = riccati_delta(pp, params, tol, &rep.diag);
    if (s % cfg.integ.record_every == 0 || s == n) record(s, dlr, dpp);
    if (s == n) {
      rep.udot_lowrank = dlr.dU.norm();
      break;
    }
    lr = retract(lr, dlr, cfg.integ.h, tol, &rep.diag);
    pp = retract(pp, dpp, cfg.integ.h, tol, &rep.diag);
    rep.diag.invariant_checks += 2;
    rep.diag.invariant_violations += !check_invariants(lr, tol) + !check_invariants(pp, tol);
  }
  rep.R_lowrank = lr.R().matrix();
  rep.R_ppca = pp.R().matrix();
  rep.s_ppca = pp.s();

  // Error second moments under the steady-state gains K = P / nu.
  const Mat G_lr = rep.R_lowrank / cfg.nu, G_pp = rep.R_ppca / cfg.nu;
  const double g_pp = rep.s_ppca / cfg.nu;
  ErrorMoment m_lr{Mat::Zero(cfg.p, cfg.p), 0.0}, m_pp{Mat::Zero(cfg.p, cfg.p), 0.0};
  const Index ne = static_cast<Index>(std::llround(cfg.err_t_end / cfg.err_h));
  const Index stride = std::max<Index>(1, static_cast<Index>(std::llround(0.1 / cfg.err_h)));
  rep.error_rows.push_back({0.0, 0.0, 0.0});
  for (Index s = 1; s <= ne; ++s) {
    m_lr = error_moment_step(m_lr, G_lr, 0.0, cfg.lambda, cfg.nu, cfg.err_h);
    m_pp = error_moment_step(m_pp, G_pp, g_pp, cfg.lambda, cfg.nu, cfg.err_h);
    if (s % stride == 0 || s == ne)
      rep.error_rows.push_back({static_cast<double>(s) * cfg.err_h, m_lr.total(cfg.d), m_pp.total(cfg.d)});
  }
  const ErrorMoment rate = moment_rhs(m_lr, G_lr, 0.0, cfg.lambda, cfg.nu);
  rep.growth_rate_lowrank = rate.total(cfg.d);
  rep.plateau_ppca = m_pp.total(cfg.d);
  rep.plateau_theory = static_cast<double>(cfg.d) * root;
  return rep;
}

}  // namespace lrdiag
