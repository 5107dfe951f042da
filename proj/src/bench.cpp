#include "lrdiag/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <Eigen/Core>

#include "lrdiag/projection.hpp"

namespace lrdiag {

namespace {

struct Instance {
  SymOp H;
  FactoredPsd base[3];
};

Instance make_instance(Index d, Index p, Index r, Rng& rng) {
  Mat G = standard_normal(d, r, rng) / std::sqrt(static_cast<double>(r));
  Tolerances wide;
  wide.max_width = std::max<std::size_t>(wide.max_width, static_cast<std::size_t>(r));
  SymOp H = make_symop(d, {{1.0, std::move(G)}}, std::nullopt, wide);
  const Mat U = random_stiefel(d, p, rng).matrix();
  const Mat R = random_spd(p, rng, 1.0) + 2.0 * Mat::Identity(p, p);
  Vec psi = (0.5 + standard_normal(d, 1, rng).array().abs()).matrix();
  return {std::move(H),
          {make_factored(Kind::LowRank, U, R), make_factored(Kind::Ppca, U, R, 0.5),
           make_factored(Kind::Fa, U, R, DiagSpec{std::move(psi)})}};
}

double seconds_of(const SymOp& H, const FactoredPsd& base) {
  const auto t0 = std::chrono::steady_clock::now();
  const TangentDelta delta = project(H, base);
  const auto t1 = std::chrono::steady_clock::now();
  // Keep the result observable so the call is not elided.
  volatile double sink = delta.dU.size() > 0 ? delta.dU(0, 0) : 0.0;
  (void)sink;
  return std::chrono::duration<double>(t1 - t0).count();
}

struct Timing {
  double median;
  double min;
};

Timing time_projection(const SymOp& H, const FactoredPsd& base, int repetitions) {
  (void)seconds_of(H, base);  // warm-up, discarded
  std::vector<double> t(static_cast<std::size_t>(repetitions));
  for (auto& v : t) v = seconds_of(H, base);
  std::sort(t.begin(), t.end());
  const std::size_t n = t.size();
  const double median = n % 2 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
  return {median, t.front()};
}

}  // namespace

void validate(const BenchSpec& spec) {
  std::vector<std::string> bad;
  if (spec.d_list.empty()) bad.emplace_back("d_list must not be empty");
  for (std::size_t i = 0; i < spec.d_list.size(); ++i) {
    if (spec.d_list[i] <= spec.p) bad.emplace_back("d_list[" + std::to_string(i) + "] must exceed p");
    if (i > 0 && spec.d_list[i] <= spec.d_list[i - 1]) bad.emplace_back("d_list must be strictly ascending");
  }
  if (spec.p < 1) bad.emplace_back("p must be at least 1");
  if (spec.r <= spec.p) bad.emplace_back("r must exceed p");
  if (spec.repetitions < 5) bad.emplace_back("repetitions must be at least 5");
  if (!bad.empty()) {
    std::string msg;
    for (const auto& b : bad) msg += (msg.empty() ? "" : "; ") + b;
    throw Error(ErrorCode::ValidationError, msg);
  }
}

BenchReport run_projection_bench(const BenchSpec& spec, const MemoryProbe& probe) {
  validate(spec);
  Eigen::setNbThreads(1);
  BenchReport report;
  report.spec = spec;
  Rng rng(spec.seed);
  std::array<std::vector<double>, 3> times;
  std::vector<double> ds;
  for (const Index d : spec.d_list) {
    const Instance inst = make_instance(d, spec.p, spec.r, rng);
    ds.push_back(static_cast<double>(d));
    const double unit = 8.0 * (static_cast<double>(d) * static_cast<double>(spec.p + spec.r) +
                               std::pow(static_cast<double>(spec.p), 4));
    for (int k = 0; k < 3; ++k) {
      const FactoredPsd& base = inst.base[k];
      BenchRow row;
      row.d = d;
      row.kind = base.kind();
      if (probe) {
        probe.reset();
        (void)project(inst.H, base);
        row.peak_bytes = probe.peak_bytes();
        report.memory_constant[k] = std::max(report.memory_constant[k], static_cast<double>(row.peak_bytes) / unit);
      }
      const Timing t = time_projection(inst.H, base, spec.repetitions);
      row.median_seconds = t.median;
      row.min_seconds = t.min;
      times[k].push_back(t.median);
      report.rows.push_back(row);
    }
  }
  for (int k = 0; k < 3; ++k) report.slope[k] = ds.size() >= 2 ? loglog_slope(ds, times[k]) : 0.0;
  return report;
}

std::vector<double> fa_ppca_time_ratio(Index d, const std::vector<Index>& p_list, Index r, int repetitions,
                                       std::uint64_t seed) {
  Eigen::setNbThreads(1);
  Rng rng(seed);
  std::vector<double> out;
  for (const Index p : p_list) {
    BenchSpec check{{d}, p, r, repetitions, seed};
    validate(check);
    const Instance inst = make_instance(d, p, r, rng);
    const double ppca = time_projection(inst.H, inst.base[1], repetitions).median;
    const double fa = time_projection(inst.H, inst.base[2], repetitions).median;
    out.push_back(fa / ppca);
  }
  return out;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorCode::DimensionMismatch, "slope needs two or more points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = std::log(x[i]) - mx;
    sxy += u * (std::log(y[i]) - my);
    sxx += u * u;
  }
  return sxy / sxx;
}

std::string format_summary(const BenchReport& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "p = %lld, r = %lld, median of %d repetitions\n",
                static_cast<long long>(report.spec.p), static_cast<long long>(report.spec.r), report.spec.repetitions);
  out << line;
  std::snprintf(line, sizeof line, "%10s  %-8s  %12s  %14s\n", "d", "form", "median [s]", "peak heap [MB]");
  out << line;
  for (const auto& row : report.rows) {
    std::snprintf(line, sizeof line, "%10lld  %-8s  %12.5f  %14.2f\n", static_cast<long long>(row.d),
                  kind_name(row.kind), row.median_seconds, static_cast<double>(row.peak_bytes) / 1e6);
    out << line;
  }
  for (int k = 0; k < 3; ++k) {
    std::snprintf(line, sizeof line, "%-8s slope %.3f, memory constant %.2f\n", kind_name(static_cast<Kind>(k)),
                  report.slope[k], report.memory_constant[k]);
    out << line;
  }
  return out.str();
}

}  // namespace lrdiag
