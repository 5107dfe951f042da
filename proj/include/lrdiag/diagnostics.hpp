#pragma once

#include <cstdint>

namespace lrdiag {

// Counters for every documented numerical fallback. Operations take a nullable
// pointer; callers that do not care pass nothing.
struct Diagnostics {
  std::uint64_t near_singular_rs = 0;    // Tikhonov-shifted (R - sI)^{-1}
  std::uint64_t ill_conditioned_phi = 0; // |1 - 2 Dbar_kk| below the floor
  std::uint64_t fa_regularized = 0;      // FA diagonal solved by the ridge fallback
  std::uint64_t positivity_clamps = 0;   // s or psi entries clamped during a step
  std::uint64_t invariant_checks = 0;    // integrator steps whose state was verified
  std::uint64_t invariant_violations = 0;

  std::uint64_t fallback_count() const {
    return near_singular_rs + ill_conditioned_phi + fa_regularized;
  }

  Diagnostics& operator+=(const Diagnostics& o) {
    near_singular_rs += o.near_singular_rs;
    ill_conditioned_phi += o.ill_conditioned_phi;
    fa_regularized += o.fa_regularized;
    positivity_clamps += o.positivity_clamps;
    invariant_checks += o.invariant_checks;
    invariant_violations += o.invariant_violations;
    return *this;
  }
};

}  // namespace lrdiag
