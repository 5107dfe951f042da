#pragma once

// Heap accounting for tests and the benchmark harness. These functions are
// defined by the lrdiag_allocprobe library, which interposes malloc/free
// (glibc only). Link it only into executables.

#include <cstddef>

namespace lrdiag::alloc_probe {

bool active();
/// Zeroes the peak and largest-request counters; the live byte count is kept.
void reset();
std::size_t live_bytes();
/// Largest live_bytes() observed since reset(), relative to live_bytes() at reset().
std::size_t peak_bytes_since_reset();
std::size_t largest_request_since_reset();

}  // namespace lrdiag::alloc_probe
