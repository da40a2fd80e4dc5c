#include "flamegs/memory.hpp"

#include <sys/resource.h>

namespace flamegs {

namespace detail {
AllocationCounters* allocation_counters = nullptr;
}

bool allocation_tracking_enabled() { return detail::allocation_counters != nullptr; }

std::size_t current_allocated_bytes() {
  return detail::allocation_counters ? detail::allocation_counters->current() : 0;
}

std::size_t peak_allocated_bytes() {
  if (detail::allocation_counters) return detail::allocation_counters->peak();
  rusage usage{};
  getrusage(RUSAGE_SELF, &usage);
  return static_cast<std::size_t>(usage.ru_maxrss) * 1024;
}

void reset_peak_allocated_bytes() {
  if (detail::allocation_counters) detail::allocation_counters->reset_peak();
}

}  // namespace flamegs
