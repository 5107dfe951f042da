#include "lrdiag/kernels.hpp"

namespace lrdiag::kernels {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) acc += x[k] * y[k];
  return acc;
}

double wdot_scalar(const double* w, const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) acc += w[k] * x[k] * y[k];
  return acc;
}

void sq_accum_scalar(double* out, const double* x, double alpha, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) out[k] += alpha * x[k] * x[k];
}

void mul_accum_scalar(double* out, const double* x, const double* y, double alpha, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) out[k] += alpha * x[k] * y[k];
}

void hadamard_scalar(double* out, const double* x, const double* y, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) out[k] = x[k] * y[k];
}

}  // namespace

const Table& scalar_table() {
  static const Table table{Isa::Scalar, dot_scalar, wdot_scalar, sq_accum_scalar,
                           mul_accum_scalar, hadamard_scalar};
  return table;
}

}  // namespace lrdiag::kernels
