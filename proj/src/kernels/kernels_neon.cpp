#include "lrdiag/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>
#endif

namespace lrdiag::kernels {

#if defined(__aarch64__)
namespace {

double dot_neon(const double* x, const double* y, std::size_t n) {
  float64x2_t a0 = vdupq_n_f64(0.0);
  float64x2_t a1 = vdupq_n_f64(0.0);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    a0 = vfmaq_f64(a0, vld1q_f64(x + k), vld1q_f64(y + k));
    a1 = vfmaq_f64(a1, vld1q_f64(x + k + 2), vld1q_f64(y + k + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(a0, a1));
  for (; k < n; ++k) acc += x[k] * y[k];
  return acc;
}

double wdot_neon(const double* w, const double* x, const double* y, std::size_t n) {
  float64x2_t a0 = vdupq_n_f64(0.0);
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) {
    float64x2_t wx = vmulq_f64(vld1q_f64(w + k), vld1q_f64(x + k));
    a0 = vfmaq_f64(a0, wx, vld1q_f64(y + k));
  }
  double acc = vaddvq_f64(a0);
  for (; k < n; ++k) acc += w[k] * x[k] * y[k];
  return acc;
}

void sq_accum_neon(double* out, const double* x, double alpha, std::size_t n) {
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) {
    float64x2_t xv = vld1q_f64(x + k);
    vst1q_f64(out + k, vfmaq_f64(vld1q_f64(out + k), vmulq_n_f64(xv, alpha), xv));
  }
  for (; k < n; ++k) out[k] += alpha * x[k] * x[k];
}

void mul_accum_neon(double* out, const double* x, const double* y, double alpha, std::size_t n) {
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) {
    float64x2_t ax = vmulq_n_f64(vld1q_f64(x + k), alpha);
    vst1q_f64(out + k, vfmaq_f64(vld1q_f64(out + k), ax, vld1q_f64(y + k)));
  }
  for (; k < n; ++k) out[k] += alpha * x[k] * y[k];
}

void hadamard_neon(double* out, const double* x, const double* y, std::size_t n) {
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) vst1q_f64(out + k, vmulq_f64(vld1q_f64(x + k), vld1q_f64(y + k)));
  for (; k < n; ++k) out[k] = x[k] * y[k];
}

}  // namespace

const Table* neon_table() {
  static const Table table{Isa::Neon, dot_neon, wdot_neon, sq_accum_neon, mul_accum_neon,
                           hadamard_neon};
  return &table;
}

#else

const Table* neon_table() { return nullptr; }

#endif

}  // namespace lrdiag::kernels
