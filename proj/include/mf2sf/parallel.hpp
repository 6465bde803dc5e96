#pragma once

#include <cstddef>
#include <functional>

namespace mf2sf {

/// Worker threads to use: MF2SF_THREADS if set and positive, otherwise the
/// hardware concurrency (at least 1).
std::size_t worker_count();

/// Calls fn(i) for i in [0, n) on up to worker_count() threads. Each index
/// runs exactly once, so results written by index are deterministic. The
/// first exception thrown by any call is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Keeps large freed blocks in the heap instead of returning them to the OS.
/// Training allocates multi-megabyte buffers per pass; without this every
/// pass pays fresh page faults. No-op outside glibc. Idempotent.
void retain_heap_memory();

}  // namespace mf2sf
