#include "lrdiag/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#define LRDIAG_HAVE_AVX2_KERNELS 1
#endif

namespace lrdiag::kernels {

#ifdef LRDIAG_HAVE_AVX2_KERNELS
namespace {

#define LRDIAG_AVX2 __attribute__((target("avx2,fma")))

LRDIAG_AVX2 inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

LRDIAG_AVX2 double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd();
  __m256d a1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + k), _mm256_loadu_pd(y + k), a0);
    a1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + k + 4), _mm256_loadu_pd(y + k + 4), a1);
  }
  for (; k + 4 <= n; k += 4)
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + k), _mm256_loadu_pd(y + k), a0);
  double acc = hsum(_mm256_add_pd(a0, a1));
  for (; k < n; ++k) acc += x[k] * y[k];
  return acc;
}

LRDIAG_AVX2 double wdot_avx2(const double* w, const double* x, const double* y, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd();
  __m256d a1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    __m256d wx0 = _mm256_mul_pd(_mm256_loadu_pd(w + k), _mm256_loadu_pd(x + k));
    __m256d wx1 = _mm256_mul_pd(_mm256_loadu_pd(w + k + 4), _mm256_loadu_pd(x + k + 4));
    a0 = _mm256_fmadd_pd(wx0, _mm256_loadu_pd(y + k), a0);
    a1 = _mm256_fmadd_pd(wx1, _mm256_loadu_pd(y + k + 4), a1);
  }
  for (; k + 4 <= n; k += 4) {
    __m256d wx = _mm256_mul_pd(_mm256_loadu_pd(w + k), _mm256_loadu_pd(x + k));
    a0 = _mm256_fmadd_pd(wx, _mm256_loadu_pd(y + k), a0);
  }
  double acc = hsum(_mm256_add_pd(a0, a1));
  for (; k < n; ++k) acc += w[k] * x[k] * y[k];
  return acc;
}

LRDIAG_AVX2 void sq_accum_avx2(double* out, const double* x, double alpha, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    __m256d xv = _mm256_loadu_pd(x + k);
    __m256d ax = _mm256_mul_pd(va, xv);
    _mm256_storeu_pd(out + k, _mm256_fmadd_pd(ax, xv, _mm256_loadu_pd(out + k)));
  }
  for (; k < n; ++k) out[k] += alpha * x[k] * x[k];
}

LRDIAG_AVX2 void mul_accum_avx2(double* out, const double* x, const double* y, double alpha,
                                std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    __m256d ax = _mm256_mul_pd(va, _mm256_loadu_pd(x + k));
    _mm256_storeu_pd(out + k, _mm256_fmadd_pd(ax, _mm256_loadu_pd(y + k), _mm256_loadu_pd(out + k)));
  }
  for (; k < n; ++k) out[k] += alpha * x[k] * y[k];
}

LRDIAG_AVX2 void hadamard_avx2(double* out, const double* x, const double* y, std::size_t n) {
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4)
    _mm256_storeu_pd(out + k, _mm256_mul_pd(_mm256_loadu_pd(x + k), _mm256_loadu_pd(y + k)));
  for (; k < n; ++k) out[k] = x[k] * y[k];
}

#undef LRDIAG_AVX2

}  // namespace

const Table* avx2_table() {
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  static const Table table{Isa::Avx2, dot_avx2, wdot_avx2, sq_accum_avx2, mul_accum_avx2,
                           hadamard_avx2};
  return supported ? &table : nullptr;
}

#else

const Table* avx2_table() { return nullptr; }

#endif

}  // namespace lrdiag::kernels
