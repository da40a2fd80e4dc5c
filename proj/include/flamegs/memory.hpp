#pragma once

#include <cstddef>

namespace flamegs {

/// True when the allocation-tracking operator new is linked into the binary.
bool allocation_tracking_enabled();

/// Bytes currently allocated through operator new (0 without tracking).
std::size_t current_allocated_bytes();

/// High-water mark of operator new allocations since the last reset. Without
/// tracking this falls back to the process resident-set maximum.
std::size_t peak_allocated_bytes();

/// Sets the high-water mark to the current allocation level.
void reset_peak_allocated_bytes();

namespace detail {
// Hooks installed by the tracking object; null when it is not linked.
struct AllocationCounters {
  std::size_t (*current)();
  std::size_t (*peak)();
  void (*reset_peak)();
};
extern AllocationCounters* allocation_counters;
}  // namespace detail

}  // namespace flamegs
