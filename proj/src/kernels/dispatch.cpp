#include <atomic>
#include <cstdlib>
#include <string_view>

#include "lrdiag/kernels.hpp"

namespace lrdiag::kernels {
namespace {

const Table* best_available() {
  if (const char* env = std::getenv("LRDIAG_SIMD"); env && std::string_view(env) == "scalar")
    return &scalar_table();
  if (const Table* t = avx2_table()) return t;
  if (const Table* t = neon_table()) return t;
  return &scalar_table();
}

std::atomic<const Table*>& slot() {
  static std::atomic<const Table*> current{best_available()};
  return current;
}

}  // namespace

const Table& active() { return *slot().load(std::memory_order_acquire); }

bool set_active_isa(Isa isa) {
  const Table* t = nullptr;
  switch (isa) {
    case Isa::Scalar: t = &scalar_table(); break;
    case Isa::Avx2: t = avx2_table(); break;
    case Isa::Neon: t = neon_table(); break;
  }
  if (!t) return false;
  slot().store(t, std::memory_order_release);
  return true;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

}  // namespace lrdiag::kernels
