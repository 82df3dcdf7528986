// Process-level tuning for executables that train models.
#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace advmil {

/// Keeps glibc from mapping and unmapping every mid-sized matrix buffer.
/// The tape allocates many short-lived blocks just above the default mmap
/// threshold; without this, page faults dominate training time.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace advmil
