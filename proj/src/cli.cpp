#include "lrdiag/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include <Eigen/QR>

#include "lrdiag/kalman.hpp"
#include "lrdiag/kernels.hpp"
#include "lrdiag/riccati.hpp"
#include "lrdiag/viflow.hpp"

#ifndef LRDIAG_VERSION
#define LRDIAG_VERSION "unknown"
#endif

namespace lrdiag::cli {

namespace fs = std::filesystem;

namespace {

// ------------------------------------------------------------------ defaults

Json block_defaults(std::string_view experiment) {
  if (experiment == "project-bench")
    return Json{{"d_list", {10000, 30000, 100000}}, {"p", 10}, {"r", 100}, {"repetitions", 5}};
  if (experiment == "riccati-compare")
    return Json{{"d", 40}, {"p", 8}, {"q_dispersion", 0.5}, {"n_scale", 2.0}, {"r0", 2.0}, {"s0", 0.5}};
  if (experiment == "swarm")
    return Json{{"d", 200},         {"p", 8},          {"q_dispersion", 0.5},   {"n_scale", 2.0},
                {"regraph_every", 0}, {"r0", 2.0},       {"s0", 1e-6},           {"psi0", 1e-6},
                {"x0_scale", 1.0},  {"noise_free", false}, {"monitor_residual", true}};
  if (experiment == "brownian")
    return Json{{"d", 50},          {"p", 5},     {"lambda", 1.0}, {"nu", 1.0},
                {"err_t_end", 50.0}, {"err_h", 0.01}, {"r0", 2.0},     {"s0", 0.5}};
  if (experiment == "viflow")
    return Json{{"d", 20},          {"p", 5},           {"epsilon", 1.0},     {"K", 1000},
                {"mode", "exact"},  {"form", "ppca"},    {"spectrum_hi", 1.0}, {"spectrum_lo", 0.1},
                {"s0", 0.2}};
  throw Error(ErrorCode::ValidationError, "unknown experiment '" + std::string(experiment) + "'");
}

// ------------------------------------------------------------------ layering

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

void collect_leaves(const Json& node, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& [key, value] : node.items()) {
    if (value.is_object()) collect_leaves(value, join(prefix, key), out);
    else out.push_back(join(prefix, key));
  }
}

const char* type_label(const Json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array of integers";
  return "object";
}

bool same_kind(const Json& def, const Json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_array())
    return v.is_array() && std::all_of(v.begin(), v.end(), [](const Json& e) { return e.is_number_integer(); });
  return false;
}

void merge(Json& dst, const Json& src, const std::string& prefix) {
  require(src.is_object(), ErrorCode::ParseError,
          "'" + (prefix.empty() ? std::string("<root>") : prefix) + "' must be a JSON object");
  for (const auto& [key, value] : src.items()) {
    const std::string path = join(prefix, key);
    require(dst.contains(key), ErrorCode::ParseError, "unknown key '" + path + "'");
    Json& slot = dst[key];
    if (slot.is_object()) {
      merge(slot, value, path);
      continue;
    }
    require(same_kind(slot, value), ErrorCode::ParseError,
            "key '" + path + "' expects " + type_label(slot) + ", got " + value.dump());
    slot = value;
  }
}

Json* find_path(Json& root, const std::string& dotted) {
  Json* node = &root;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) return nullptr;
    node = &(*node)[key];
    if (dot == std::string::npos) return node->is_object() ? nullptr : node;
    start = dot + 1;
  }
}

std::string resolve_key(const Json& tree, const std::string& key) {
  std::vector<std::string> leaves;
  collect_leaves(tree, "", leaves);
  if (std::find(leaves.begin(), leaves.end(), key) != leaves.end()) return key;
  std::vector<std::string> hits;
  for (const auto& leaf : leaves) {
    const std::size_t dot = leaf.rfind('.');
    if (dot != std::string::npos && leaf.substr(dot + 1) == key) hits.push_back(leaf);
  }
  require(!hits.empty(), ErrorCode::ParseError, "unknown key '" + key + "'");
  require(hits.size() == 1, ErrorCode::ParseError, "ambiguous key '" + key + "'");
  return hits.front();
}

template <class T>
bool parse_number(std::string_view text, T& out) {
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

Json parse_override(const Json& def, const std::string& path, const std::string& text) {
  const auto fail = [&] {
    return Error(ErrorCode::ParseError,
                 "key '" + path + "' expects " + type_label(def) + ", got '" + text + "'");
  };
  if (def.is_boolean()) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw fail();
  }
  if (def.is_number_integer()) {
    std::int64_t v = 0;
    if (!parse_number(text, v)) throw fail();
    return v;
  }
  if (def.is_number()) {
    double v = 0.0;
    if (!parse_number(text, v)) throw fail();
    return v;
  }
  if (def.is_string()) return text;
  Json arr = Json::array();
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::int64_t v = 0;
    if (!parse_number(std::string_view(item), v)) throw fail();
    arr.push_back(v);
  }
  return arr;
}

ExperimentConfig layer(std::string_view experiment, const Json* file_tree, const std::vector<Override>& overrides) {
  ExperimentConfig cfg{std::string(experiment), default_config(experiment)};
  if (file_tree) {
    if (file_tree->is_object() && file_tree->contains("experiment")) {
      const Json& e = (*file_tree)["experiment"];
      require(e.is_string() && e.get<std::string>() == experiment, ErrorCode::ValidationError,
              "experiment: file names '" + (e.is_string() ? e.get<std::string>() : e.dump()) +
                  "' but the subcommand is '" + std::string(experiment) + "'");
    }
    merge(cfg.tree, *file_tree, "");
  }
  for (const auto& [key, text] : overrides) {
    const std::string path = resolve_key(cfg.tree, key);
    require(path != "experiment", ErrorCode::ValidationError, "experiment: fixed by the subcommand");
    Json* slot = find_path(cfg.tree, path);
    *slot = parse_override(*slot, path, text);
  }
  validate(cfg);
  return cfg;
}

Json parse_json(std::string_view text, const std::string& origin) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, origin + ": " + e.what());
  }
}

// ------------------------------------------------------------------ validation

class Checker {
 public:
  explicit Checker(const Json& tree) : tree_(tree) {}

  double num(const std::string& path) const { return at(path).get<double>(); }
  std::int64_t integer(const std::string& path) const { return at(path).get<std::int64_t>(); }
  std::string text(const std::string& path) const { return at(path).get<std::string>(); }

  void check(bool ok, const std::string& path, const std::string& reason) {
    if (!ok) problems_.push_back(path + ": " + reason);
  }

  void finish() const {
    if (problems_.empty()) return;
    std::string msg;
    for (const auto& p : problems_) msg += (msg.empty() ? "" : "; ") + p;
    throw Error(ErrorCode::ValidationError, msg);
  }

 private:
  const Json& at(const std::string& path) const {
    const Json* node = &tree_;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = path.find('.', start);
      node = &(*node)[path.substr(start, dot == std::string::npos ? std::string::npos : dot - start)];
      if (dot == std::string::npos) return *node;
      start = dot + 1;
    }
  }

  const Json& tree_;
  std::vector<std::string> problems_;
};

void check_dims(Checker& c, const std::string& b, std::int64_t min_d) {
  const auto d = c.integer(b + ".d"), p = c.integer(b + ".p");
  c.check(d >= min_d, b + ".d", "must be at least " + std::to_string(min_d));
  c.check(p >= 1, b + ".p", "must be at least 1");
  c.check(p < d, b + ".p", "must be smaller than d");
}

// ------------------------------------------------------------------ runners

std::int64_t as_int(std::uint64_t v) { return static_cast<std::int64_t>(v); }

IntegratorConfig integrator_of(const ExperimentConfig& cfg) {
  IntegratorConfig integ;
  integ.h = cfg.tree["h"].get<double>();
  integ.t_end = cfg.tree["t_end"].get<double>();
  integ.record_every = cfg.tree["record_every"].get<Index>();
  return integ;
}

struct Artifacts {
  RunRecord run;
  std::vector<std::pair<std::string, RunRecord>> extra;  // additional CSV files
  Json results = Json::object();
  Diagnostics diag;
  std::string summary;
  std::string plot;  // gnuplot commands after the common preamble
};

std::string plot_all_columns(const std::string& file, const RunRecord& rec, bool logy = false) {
  std::string s = "set xlabel '" + rec.columns.front() + "'\n";
  if (logy) s += "set logscale y\n";
  s += "plot ";
  for (std::size_t c = 1; c < rec.columns.size(); ++c) {
    if (c > 1) s += ", \\\n     ";
    s += "'" + file + "' using 1:" + std::to_string(c + 1) + " with lines";
  }
  return s + "\n";
}

Artifacts run_bench(const ExperimentConfig& cfg, const MemoryProbe& probe) {
  const Json& b = cfg.tree["project-bench"];
  BenchSpec spec;
  spec.d_list = b["d_list"].get<std::vector<Index>>();
  spec.p = b["p"].get<Index>();
  spec.r = b["r"].get<Index>();
  spec.repetitions = b["repetitions"].get<int>();
  spec.seed = cfg.seed();
  const BenchReport rep = run_projection_bench(spec, probe);

  Artifacts a;
  a.run.columns = {"d", "form", "median_seconds", "min_seconds", "peak_bytes"};
  for (const auto& row : rep.rows)
    a.run.rows.push_back({std::int64_t{row.d}, std::string(kind_name(row.kind)), row.median_seconds,
                          row.min_seconds, static_cast<std::int64_t>(row.peak_bytes)});
  for (int k = 0; k < 3; ++k) {
    a.results["slope_" + std::string(kind_name(static_cast<Kind>(k)))] = rep.slope[k];
    a.results["memory_constant_" + std::string(kind_name(static_cast<Kind>(k)))] = rep.memory_constant[k];
  }
  a.results["reference_d1e6_p10_r100_seconds"] = Json{{"lowrank", 3.5}, {"ppca", 7.0}, {"fa", 35.0}};
  a.summary = format_summary(rep);
  a.plot = "set xlabel 'd'\nset ylabel 'median seconds'\nset logscale xy\n"
           "plot 'project-bench_run.csv' using 1:(strcol(2) eq 'lowrank' ? $3 : NaN) title 'lowrank' with linespoints, \\\n"
           "     '' using 1:(strcol(2) eq 'ppca' ? $3 : NaN) title 'ppca' with linespoints, \\\n"
           "     '' using 1:(strcol(2) eq 'fa' ? $3 : NaN) title 'fa' with linespoints\n";
  return a;
}

Artifacts run_riccati_compare(const ExperimentConfig& cfg) {
  const Json& b = cfg.tree["riccati-compare"];
  const Index d = b["d"].get<Index>(), p = b["p"].get<Index>();
  const double r0 = b["r0"].get<double>(), s0 = b["s0"].get<double>();
  const SwarmScenario sc =
      make_swarm_scenario(d / 2, cfg.seed(), b["q_dispersion"].get<double>(), b["n_scale"].get<double>());
  const RiccatiParams params = sc.params_at(0);
  Rng rng(cfg.seed());
  const Mat U = random_stiefel(d, p, rng).matrix();
  const Mat R = r0 * Mat::Identity(p, p);
  const FactoredPsd starts[3] = {make_factored(Kind::LowRank, U, R), make_factored(Kind::Ppca, U, R, s0),
                                 make_factored(Kind::Fa, U, R, DiagSpec{Vec(Vec::Constant(d, s0))})};
  const IntegratorConfig integ = integrator_of(cfg);
  const DenseTrajectory dense = integrate_dense_riccati(densify(starts[1]), params, integ);

  Artifacts a;
  std::vector<EulerResult> runs;
  for (const auto& Y0 : starts) {
    const DeltaFn f = [&](double, const FactoredPsd& Y, Diagnostics& diag) {
      return riccati_delta(Y, params, integ.tol, &diag);
    };
    runs.push_back(euler_drive(Y0, f, integ));
    a.diag += runs.back().diag;
  }
  a.run.columns = {"t", "covdist_lowrank", "covdist_ppca", "covdist_fa", "trace_dense", "clamp_count",
                   "fallback_count"};
  double mean[3] = {0, 0, 0};
  for (std::size_t i = 0; i < dense.times.size(); ++i) {
    const Mat& P = dense.states[i];
    std::vector<Cell> row{dense.times[i]};
    for (int k = 0; k < 3; ++k) {
      const double dist = (densify(runs[k].series[i]) - P).norm() / P.norm();
      mean[k] += dist / static_cast<double>(dense.times.size());
      row.emplace_back(dist);
    }
    row.emplace_back(P.trace());
    row.emplace_back(as_int(a.diag.positivity_clamps));
    row.emplace_back(as_int(a.diag.fallback_count()));
    a.run.rows.push_back(std::move(row));
  }
  std::ostringstream s;
  s << "time-averaged covariance distance to the dense Riccati solution:\n";
  for (int k = 0; k < 3; ++k) {
    a.results["mean_covdist_" + std::string(kind_name(static_cast<Kind>(k)))] = mean[k];
    s << "  " << kind_name(static_cast<Kind>(k)) << " " << mean[k] << "\n";
  }
  a.results["min_eigenvalue_dense"] = dense.min_eigenvalue;
  a.summary = s.str();
  RunRecord head{{a.run.columns.begin(), a.run.columns.begin() + 4}, {}};
  a.plot = plot_all_columns("riccati-compare_run.csv", head);
  return a;
}

Artifacts run_swarm_experiment(const ExperimentConfig& cfg) {
  const Json& b = cfg.tree["swarm"];
  SwarmConfig sc;
  sc.n_agents = b["d"].get<Index>() / 2;
  sc.p = b["p"].get<Index>();
  sc.q_dispersion = b["q_dispersion"].get<double>();
  sc.n_scale = b["n_scale"].get<double>();
  sc.regraph_every = b["regraph_every"].get<Index>();
  sc.r0 = b["r0"].get<double>();
  sc.sim.h = cfg.tree["h"].get<double>();
  sc.sim.t_end = cfg.tree["t_end"].get<double>();
  sc.sim.noise_free = b["noise_free"].get<bool>();
  sc.sim.x0_scale = b["x0_scale"].get<double>();
  sc.filter.integ = integrator_of(cfg);
  sc.filter.s0 = b["s0"].get<double>();
  sc.filter.psi0 = b["psi0"].get<double>();
  sc.filter.monitor_residual = b["monitor_residual"].get<bool>();
  const SwarmResult res = run_swarm(sc, cfg.seed());

  Artifacts a;
  a.diag = res.diag;
  a.run.columns = {"t",           "err_state_lowrank", "err_state_ppca", "err_state_fa",
                   "covdist_lowrank", "covdist_ppca",   "covdist_fa",     "residual_lowrank",
                   "residual_ppca", "residual_fa",       "clamp_count",    "fallback_count"};
  for (const auto& r : res.rows) {
    std::vector<Cell> row{r.t};
    for (double v : r.err_state) row.emplace_back(v);
    for (double v : r.covdist) row.emplace_back(v);
    for (double v : r.residual) row.emplace_back(v);
    row.emplace_back(as_int(r.clamp_count));
    row.emplace_back(as_int(r.fallback_count));
    a.run.rows.push_back(std::move(row));
  }
  std::ostringstream s;
  s << "time averages over " << res.rows.size() << " records (d = " << 2 * sc.n_agents << ", p = " << sc.p << "):\n";
  for (int k = 0; k < 3; ++k) {
    const std::string name = kind_name(static_cast<Kind>(k));
    a.results["mean_covdist_" + name] = res.mean_covdist[k];
    a.results["mean_err_state_" + name] = res.mean_err_state[k];
    s << "  " << name << ": covariance distance " << res.mean_covdist[k] << ", state error vs full "
      << res.mean_err_state[k] << "\n";
  }
  a.summary = s.str();
  a.plot = "set multiplot layout 2,1\nset xlabel 't'\nset ylabel 'state error vs full KF'\n"
           "plot 'swarm_run.csv' using 1:2 with lines, '' using 1:3 with lines, '' using 1:4 with lines\n"
           "set ylabel 'covariance distance'\n"
           "plot 'swarm_run.csv' using 1:5 with lines, '' using 1:6 with lines, '' using 1:7 with lines\n"
           "unset multiplot\n";
  return a;
}

Artifacts run_brownian_experiment(const ExperimentConfig& cfg) {
  const Json& b = cfg.tree["brownian"];
  BrownianConfig bc;
  bc.d = b["d"].get<Index>();
  bc.p = b["p"].get<Index>();
  bc.lambda = b["lambda"].get<double>();
  bc.nu = b["nu"].get<double>();
  bc.integ = integrator_of(cfg);
  bc.err_t_end = b["err_t_end"].get<double>();
  bc.err_h = b["err_h"].get<double>();
  bc.r0 = b["r0"].get<double>();
  bc.s0 = b["s0"].get<double>();
  const BrownianReport rep = brownian_experiment(bc, cfg.seed());

  Artifacts a;
  a.diag = rep.diag;
  a.run.columns = {"t", "s_ppca", "rdist_ppca", "rdist_lowrank", "udot_lowrank", "udot_ppca"};
  for (const auto& r : rep.rows)
    a.run.rows.push_back({r.t, r.s_ppca, r.rdist_ppca, r.rdist_lowrank, r.udot_lowrank, r.udot_ppca});
  RunRecord err;
  err.columns = {"t", "err_lowrank", "err_ppca"};
  for (const auto& r : rep.error_rows) err.rows.push_back({r.t, r.err_lowrank, r.err_ppca});
  a.extra.emplace_back("brownian_error.csv", std::move(err));
  const double target = std::sqrt(bc.lambda * bc.nu);
  a.results["steady_state_theory"] = target;
  a.results["s_ppca"] = rep.s_ppca;
  a.results["udot_lowrank"] = rep.udot_lowrank;
  a.results["growth_rate_lowrank"] = rep.growth_rate_lowrank;
  a.results["growth_rate_theory"] = static_cast<double>(bc.d - bc.p) * bc.lambda;
  a.results["plateau_ppca"] = rep.plateau_ppca;
  a.results["plateau_theory"] = rep.plateau_theory;
  std::ostringstream s;
  s << "steady state: s_ppca = " << rep.s_ppca << " (theory " << target << "), |dU| low-rank = " << rep.udot_lowrank
    << "\nerror moment: low-rank growth rate " << rep.growth_rate_lowrank << " (theory "
    << static_cast<double>(bc.d - bc.p) * bc.lambda << "), PPCA plateau " << rep.plateau_ppca << " (theory "
    << rep.plateau_theory << ")\n";
  a.summary = s.str();
  a.plot = "set multiplot layout 2,1\n" + plot_all_columns("brownian_run.csv", a.run) +
           "set xlabel 't'\nplot 'brownian_error.csv' using 1:2 with lines, '' using 1:3 with lines\n"
           "unset multiplot\n";
  return a;
}

Artifacts run_viflow_experiment(const ExperimentConfig& cfg) {
  const Json& b = cfg.tree["viflow"];
  const Index d = b["d"].get<Index>(), p = b["p"].get<Index>();
  const double eps = b["epsilon"].get<double>();
  const double hi = b["spectrum_hi"].get<double>(), lo = b["spectrum_lo"].get<double>();
  Rng rng(cfg.seed());
  const Mat Q = Eigen::HouseholderQR<Mat>(standard_normal(d, d, rng)).householderQ();
  Vec lam(d);
  for (Index i = 0; i < d; ++i)
    lam[i] = hi * std::pow(lo / hi, static_cast<double>(i) / static_cast<double>(std::max<Index>(d - 1, 1)));
  const Mat M = Q * lam.asDiagonal() * Q.transpose();
  const Vec m = standard_normal(d, 1, rng);
  const Mat U = random_stiefel(d, p, rng).matrix();
  const double s0 = b["s0"].get<double>();
  const FactoredPsd Y0 = b["form"].get<std::string>() == "fa"
                             ? make_factored(Kind::Fa, U, Mat::Identity(p, p), DiagSpec{Vec(Vec::Constant(d, s0))})
                             : make_factored(Kind::Ppca, U, Mat::Identity(p, p), s0);
  VIConfig vc;
  vc.integ = integrator_of(cfg);
  vc.K = b["K"].get<Index>();
  vc.mode = b["mode"].get<std::string>() == "exact" ? Expectation::ExactGaussian : Expectation::MonteCarlo;
  const VIRun run = vi_run(TargetPotential::gaussian(m, 0.5 * (M + M.transpose()), eps), Vec::Zero(d), Y0, vc, rng);

  Artifacts a;
  a.diag = run.diag;
  a.run.columns = {"t", "mu_err", "s", "angle", "cov_err"};
  for (const auto& r : run.rows) a.run.rows.push_back({r.t, r.mu_err, r.s, r.angle, r.cov_err});
  const VIRow& last = run.rows.back();
  a.results["mu_err"] = last.mu_err;
  a.results["angle"] = last.angle;
  a.results["cov_err"] = last.cov_err;
  std::ostringstream s;
  s << "t = " << last.t << ": |mu - m| = " << last.mu_err << ", principal angle = " << last.angle
    << " rad, relative covariance error = " << last.cov_err << "\n";
  a.summary = s.str();
  a.plot = plot_all_columns("viflow_run.csv", a.run, true);
  return a;
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Json diagnostics_json(const Diagnostics& d) {
  return Json{{"near_singular_rs", d.near_singular_rs},       {"ill_conditioned_phi", d.ill_conditioned_phi},
              {"fa_regularized", d.fa_regularized},           {"positivity_clamps", d.positivity_clamps},
              {"invariant_checks", d.invariant_checks},       {"invariant_violations", d.invariant_violations},
              {"fallback_count", d.fallback_count()}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  require(static_cast<bool>(out), ErrorCode::IoError, "write to '" + path.string() + "' failed");
}

std::string csv_field(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
  const std::string& s = std::get<std::string>(c);
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

}  // namespace

// ------------------------------------------------------------------ public API

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"project-bench", "riccati-compare", "swarm", "brownian", "viflow"};
  return names;
}

Json default_config(std::string_view experiment) {
  Json tree{{"experiment", std::string(experiment)}, {"seed", 1},          {"h", 0.01},
            {"t_end", 10.0},                         {"record_every", 1}, {"output_path", "."}};
  tree[std::string(experiment)] = block_defaults(experiment);
  return tree;
}

std::vector<std::string> leaf_paths(const Json& tree) {
  std::vector<std::string> out;
  collect_leaves(tree, "", out);
  return out;
}

std::uint64_t ExperimentConfig::seed() const { return tree["seed"].get<std::uint64_t>(); }

fs::path ExperimentConfig::output_path() const { return fs::path(tree["output_path"].get<std::string>()); }

ExperimentConfig parse_config_text(std::string_view experiment, std::string_view json_text,
                                   const std::vector<Override>& overrides) {
  const Json file = parse_json(json_text, "config");
  return layer(experiment, &file, overrides);
}

ExperimentConfig parse_config(std::string_view experiment, const fs::path& file,
                              const std::vector<Override>& overrides) {
  if (file.empty()) return layer(experiment, nullptr, overrides);
  std::ifstream in(file, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot read config '" + file.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  const Json tree = parse_json(text.str(), file.string());
  return layer(experiment, &tree, overrides);
}

void validate(const ExperimentConfig& cfg) {
  Checker c(cfg.tree);
  const double h = c.num("h"), t_end = c.num("t_end");
  c.check(std::isfinite(h) && h > 0.0, "h", "must be positive");
  c.check(std::isfinite(t_end) && t_end > 0.0, "t_end", "must be positive");
  c.check(!(h > 0.0) || t_end >= h, "t_end", "must be at least h");
  c.check(c.integer("record_every") >= 1, "record_every", "must be at least 1");
  c.check(cfg.tree["seed"].is_number_unsigned() || c.integer("seed") >= 0, "seed", "must be non-negative");
  c.check(!c.text("output_path").empty(), "output_path", "must not be empty");
  const std::string& e = cfg.experiment;
  const std::string b = e;
  if (e == "project-bench") {
    const auto d_list = cfg.tree[b]["d_list"].get<std::vector<std::int64_t>>();
    const auto p = c.integer(b + ".p"), r = c.integer(b + ".r");
    c.check(!d_list.empty(), b + ".d_list", "must not be empty");
    for (std::size_t i = 0; i < d_list.size(); ++i) {
      c.check(d_list[i] > p, b + ".d_list", "entry " + std::to_string(d_list[i]) + " must exceed p");
      if (i > 0) c.check(d_list[i] > d_list[i - 1], b + ".d_list", "must be strictly ascending");
    }
    c.check(p >= 1, b + ".p", "must be at least 1");
    c.check(r > p, b + ".r", "must exceed p");
    c.check(c.integer(b + ".repetitions") >= 5, b + ".repetitions", "must be at least 5");
  } else if (e == "riccati-compare" || e == "swarm") {
    check_dims(c, b, 4);
    c.check(c.integer(b + ".d") % 2 == 0, b + ".d", "must be even (two coordinates per agent)");
    c.check(c.integer(b + ".d") <= static_cast<std::int64_t>(default_tolerances().max_dense), b + ".d",
            "exceeds the dense reference limit " + std::to_string(default_tolerances().max_dense));
    const double q = c.num(b + ".q_dispersion");
    c.check(q >= 0.0 && q < 1.0, b + ".q_dispersion", "must lie in [0, 1)");
    c.check(c.num(b + ".n_scale") > 0.0, b + ".n_scale", "must be positive");
    c.check(c.num(b + ".r0") > 0.0, b + ".r0", "must be positive");
    c.check(c.num(b + ".s0") > 0.0, b + ".s0", "must be positive");
    if (e == "swarm") {
      c.check(c.integer(b + ".regraph_every") >= 0, b + ".regraph_every", "must be non-negative");
      c.check(c.num(b + ".psi0") > 0.0, b + ".psi0", "must be positive");
      c.check(c.num(b + ".x0_scale") >= 0.0, b + ".x0_scale", "must be non-negative");
    }
  } else if (e == "brownian") {
    check_dims(c, b, 2);
    c.check(c.num(b + ".lambda") > 0.0, b + ".lambda", "must be positive");
    c.check(c.num(b + ".nu") > 0.0, b + ".nu", "must be positive");
    c.check(c.num(b + ".err_t_end") > 0.0, b + ".err_t_end", "must be positive");
    c.check(c.num(b + ".err_h") > 0.0, b + ".err_h", "must be positive");
    c.check(c.num(b + ".r0") > 0.0, b + ".r0", "must be positive");
    c.check(c.num(b + ".s0") > 0.0, b + ".s0", "must be positive");
  } else if (e == "viflow") {
    check_dims(c, b, 2);
    c.check(c.integer(b + ".d") <= static_cast<std::int64_t>(default_tolerances().max_dense), b + ".d",
            "exceeds the dense target limit " + std::to_string(default_tolerances().max_dense));
    c.check(c.num(b + ".epsilon") > 0.0, b + ".epsilon", "must be positive");
    c.check(c.integer(b + ".K") >= 1, b + ".K", "must be at least 1");
    const std::string mode = c.text(b + ".mode"), form = c.text(b + ".form");
    c.check(mode == "exact" || mode == "monte-carlo", b + ".mode", "must be 'exact' or 'monte-carlo'");
    c.check(form == "ppca" || form == "fa", b + ".form", "must be 'ppca' or 'fa'");
    c.check(!(mode == "exact" && form == "fa"), b + ".form", "exact mode runs the ppca form");
    const double lo = c.num(b + ".spectrum_lo"), hi = c.num(b + ".spectrum_hi");
    c.check(lo > 0.0, b + ".spectrum_lo", "must be positive");
    c.check(hi >= lo, b + ".spectrum_hi", "must be at least spectrum_lo");
    c.check(c.num(b + ".s0") > 0.0, b + ".s0", "must be positive");
  }
  c.finish();
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

void write_csv(const RunRecord& record, const fs::path& path) {
  std::string text;
  for (std::size_t c = 0; c < record.columns.size(); ++c) text += (c ? "," : "") + record.columns[c];
  text += "\n";
  for (const auto& row : record.rows) {
    require(row.size() == record.columns.size(), ErrorCode::DimensionMismatch, "row width differs from the header");
    for (std::size_t c = 0; c < row.size(); ++c) text += (c ? "," : "") + csv_field(row[c]);
    text += "\n";
  }
  write_text(path, text);
}

RunOutcome run_experiment(const ExperimentConfig& cfg, const MemoryProbe& probe) {
  validate(cfg);
  const fs::path dir = cfg.output_path();
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorCode::IoError, "cannot create output directory '" + dir.string() + "'");

  const std::string started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  const std::string& e = cfg.experiment;
  Artifacts a = e == "project-bench"     ? run_bench(cfg, probe)
                : e == "riccati-compare" ? run_riccati_compare(cfg)
                : e == "swarm"           ? run_swarm_experiment(cfg)
                : e == "brownian"        ? run_brownian_experiment(cfg)
                                         : run_viflow_experiment(cfg);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  RunOutcome out;
  out.diag = a.diag;
  out.summary = a.summary;
  const fs::path csv = dir / (e + "_run.csv");
  write_csv(a.run, csv);
  out.files.push_back(csv);
  for (const auto& [name, rec] : a.extra) {
    write_csv(rec, dir / name);
    out.files.push_back(dir / name);
  }
  const fs::path gp = dir / (e + "_run.gp");
  write_text(gp, "# gnuplot script; run from the output directory\nset datafile separator ','\n"
                 "set key autotitle columnhead\n" + a.plot);
  out.files.push_back(gp);

  const fs::path meta = dir / (e + "_run.meta.json");
  Json files = Json::array();
  for (const auto& f : out.files) files.push_back(f.filename().string());
  files.push_back(meta.filename().string());
  const Json doc{{"experiment", e},
                 {"version", LRDIAG_VERSION},
                 {"kernel_isa", std::string(kernels::isa_name(kernels::active().isa))},
                 {"started_utc", started},
                 {"elapsed_seconds", elapsed},
                 {"config", cfg.tree},
                 {"results", a.results},
                 {"diagnostics", diagnostics_json(a.diag)},
                 {"files", files}};
  write_text(meta, doc.dump(2) + "\n");
  out.files.push_back(meta);
  return out;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParseError:
    case ErrorCode::ValidationError: return 2;
    case ErrorCode::IoError: return 4;
    default: return 3;
  }
}

}  // namespace lrdiag::cli
