// Replacement global allocation functions that keep a live-byte count and a
// high-water mark. Linked into executables, never into the Python module.
#include "flamegs/memory.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <malloc.h>
#include <new>

namespace {

std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};

void note_alloc(void* p) {
  if (!p) return;
  const std::size_t n = malloc_usable_size(p);
  const std::size_t now = g_current.fetch_add(n, std::memory_order_relaxed) + n;
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void note_free(void* p) {
  if (!p) return;
  g_current.fetch_sub(malloc_usable_size(p), std::memory_order_relaxed);
}

void* tracked_alloc(std::size_t size) {
  void* p = std::malloc(size ? size : 1);
  if (!p) throw std::bad_alloc();
  note_alloc(p);
  return p;
}

void* tracked_aligned_alloc(std::size_t size, std::align_val_t align) {
  void* p = nullptr;
  const std::size_t a = std::max(static_cast<std::size_t>(align), sizeof(void*));
  if (posix_memalign(&p, a, size ? size : 1) != 0) throw std::bad_alloc();
  note_alloc(p);
  return p;
}

void tracked_free(void* p) {
  note_free(p);
  std::free(p);
}

flamegs::detail::AllocationCounters g_counters{
    [] { return g_current.load(std::memory_order_relaxed); },
    [] { return g_peak.load(std::memory_order_relaxed); },
    [] { g_peak.store(g_current.load(std::memory_order_relaxed), std::memory_order_relaxed); }};

struct Install {
  Install() { flamegs::detail::allocation_counters = &g_counters; }
} g_install;

}  // namespace

void* operator new(std::size_t size) { return tracked_alloc(size); }
void* operator new[](std::size_t size) { return tracked_alloc(size); }
void* operator new(std::size_t size, const std::nothrow_t&) noexcept {
  try {
    return tracked_alloc(size);
  } catch (...) {
    return nullptr;
  }
}
void* operator new[](std::size_t size, const std::nothrow_t&) noexcept {
  try {
    return tracked_alloc(size);
  } catch (...) {
    return nullptr;
  }
}
void* operator new(std::size_t size, std::align_val_t a) { return tracked_aligned_alloc(size, a); }
void* operator new[](std::size_t size, std::align_val_t a) { return tracked_aligned_alloc(size, a); }

void operator delete(void* p) noexcept { tracked_free(p); }
void operator delete[](void* p) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete(void* p, std::align_val_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::align_val_t) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t, std::align_val_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::size_t, std::align_val_t) noexcept { tracked_free(p); }
