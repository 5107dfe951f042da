#pragma once

// Timing and memory harness for the three projectors on H = G G^T with a
// random d x r factor G, r > p. Runs single-threaded; reports medians and
// log-log scaling exponents in d.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lrdiag/factored.hpp"

namespace lrdiag {

struct BenchSpec {
  std::vector<Index> d_list{10000, 30000, 100000};
  Index p = 10;
  Index r = 100;
  int repetitions = 5;
  std::uint64_t seed = 1;
};

/// Throws ValidationError naming every violated constraint.
void validate(const BenchSpec& spec);

/// Optional heap accounting hooks (the allocation probe in executables that
/// link it). Peak bytes are reported as 0 when absent.
struct MemoryProbe {
  std::function<void()> reset;
  std::function<std::size_t()> peak_bytes;

  explicit operator bool() const { return reset && peak_bytes; }
};

struct BenchRow {
  Index d = 0;
  Kind kind = Kind::LowRank;
  double median_seconds = 0.0;
  double min_seconds = 0.0;
  std::size_t peak_bytes = 0;  // auxiliary heap during one projection
};

struct BenchReport {
  BenchSpec spec;
  std::vector<BenchRow> rows;            // d-major, LowRank/Ppca/Fa within each d
  std::array<double, 3> slope{};         // log-log slope of median time vs d, per Kind
  // Max over d of peak_bytes / (8 (d (p + r) + p^4)): the constant c in the
  // linear memory bound, per Kind. Zero without a probe.
  std::array<double, 3> memory_constant{};
};

BenchReport run_projection_bench(const BenchSpec& spec, const MemoryProbe& probe = {});

/// Median FA time / median PPCA time at fixed d for each p in p_list.
std::vector<double> fa_ppca_time_ratio(Index d, const std::vector<Index>& p_list, Index r, int repetitions,
                                       std::uint64_t seed);

/// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Fixed-width table for terminals.
std::string format_summary(const BenchReport& report);

}  // namespace lrdiag
