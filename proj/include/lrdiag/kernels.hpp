#pragma once

// Row-streaming inner loops shared by the projections and operators.
//
// Every kernel exists in a scalar reference form and, where the CPU supports
// it, an AVX2+FMA (x86-64) or NEON (aarch64) form. The active table is chosen
// once at first use from the CPU features; set LRDIAG_SIMD=scalar in the
// environment, or call set_active_isa(), to force the reference path.

#include <cstddef>
#include <string_view>

namespace lrdiag::kernels {

enum class Isa { Scalar, Avx2, Neon };

struct Table {
  Isa isa;
  // sum_k x[k] * y[k]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // sum_k w[k] * x[k] * y[k]
  double (*wdot)(const double* w, const double* x, const double* y, std::size_t n);
  // out[k] += alpha * x[k]^2
  void (*sq_accum)(double* out, const double* x, double alpha, std::size_t n);
  // out[k] += alpha * x[k] * y[k]
  void (*mul_accum)(double* out, const double* x, const double* y, double alpha, std::size_t n);
  // out[k] = x[k] * y[k]
  void (*hadamard)(double* out, const double* x, const double* y, std::size_t n);
};

const Table& scalar_table();
// Null when the ISA is not compiled in or not supported by this CPU.
const Table* avx2_table();
const Table* neon_table();

const Table& active();
bool set_active_isa(Isa isa);  // false if unavailable; the active table is unchanged
std::string_view isa_name(Isa isa);

}  // namespace lrdiag::kernels
