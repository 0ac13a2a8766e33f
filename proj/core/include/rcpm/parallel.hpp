#pragma once

#include <cstddef>
#include <functional>

namespace rcpm {

/// Worker count: RCPM_THREADS if set and positive, else hardware concurrency.
int thread_count();

/// Runs body(chunk, begin, end) over fixed chunks of [0, n). Chunk boundaries depend
/// only on n and chunk_size, never on the thread count, so per-chunk partial results
/// reduced in chunk order are reproducible.
void parallel_chunks(std::size_t n, std::size_t chunk_size,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& body);

inline std::size_t chunk_count(std::size_t n, std::size_t chunk_size) {
  return (n + chunk_size - 1) / chunk_size;
}

}  // namespace rcpm
