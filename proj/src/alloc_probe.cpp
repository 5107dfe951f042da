#include "lrdiag/alloc_probe.hpp"

#include <atomic>
#include <cerrno>
#include <cstdlib>

#include <malloc.h>

extern "C" {
void* __libc_malloc(std::size_t);
void* __libc_calloc(std::size_t, std::size_t);
void* __libc_realloc(void*, std::size_t);
void* __libc_memalign(std::size_t, std::size_t);
void __libc_free(void*);
}

namespace {

std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_base{0};
std::atomic<std::size_t> g_peak{0};
std::atomic<std::size_t> g_largest{0};

void raise_max(std::atomic<std::size_t>& slot, std::size_t v) {
  std::size_t cur = slot.load(std::memory_order_relaxed);
  while (v > cur && !slot.compare_exchange_weak(cur, v, std::memory_order_relaxed)) {
  }
}

void note_alloc(void* ptr, std::size_t requested) {
  if (!ptr) return;
  const std::size_t live = g_live.fetch_add(malloc_usable_size(ptr), std::memory_order_relaxed) +
                           malloc_usable_size(ptr);
  raise_max(g_peak, live);
  raise_max(g_largest, requested);
}

void note_free(void* ptr) {
  if (ptr) g_live.fetch_sub(malloc_usable_size(ptr), std::memory_order_relaxed);
}

}  // namespace

extern "C" {

void* malloc(std::size_t n) {
  void* p = __libc_malloc(n);
  note_alloc(p, n);
  return p;
}

void* calloc(std::size_t count, std::size_t size) {
  void* p = __libc_calloc(count, size);
  note_alloc(p, count * size);
  return p;
}

void* realloc(void* old, std::size_t n) {
  const std::size_t before = old ? malloc_usable_size(old) : 0;
  void* p = __libc_realloc(old, n);
  if (!p) return p;
  g_live.fetch_sub(before, std::memory_order_relaxed);
  note_alloc(p, n);
  return p;
}

void free(void* p) {
  note_free(p);
  __libc_free(p);
}

void* memalign(std::size_t align, std::size_t n) {
  void* p = __libc_memalign(align, n);
  note_alloc(p, n);
  return p;
}

void* aligned_alloc(std::size_t align, std::size_t n) { return memalign(align, n); }

int posix_memalign(void** out, std::size_t align, std::size_t n) {
  void* p = memalign(align, n);
  if (!p) return ENOMEM;
  *out = p;
  return 0;
}

}  // extern "C"

namespace lrdiag::alloc_probe {

bool active() { return true; }

void reset() {
  const std::size_t live = g_live.load(std::memory_order_relaxed);
  g_base.store(live, std::memory_order_relaxed);
  g_peak.store(live, std::memory_order_relaxed);
  g_largest.store(0, std::memory_order_relaxed);
}

std::size_t live_bytes() { return g_live.load(std::memory_order_relaxed); }

std::size_t peak_bytes_since_reset() {
  const std::size_t peak = g_peak.load(std::memory_order_relaxed);
  const std::size_t base = g_base.load(std::memory_order_relaxed);
  return peak > base ? peak - base : 0;
}

std::size_t largest_request_since_reset() { return g_largest.load(std::memory_order_relaxed); }

}  // namespace lrdiag::alloc_probe
