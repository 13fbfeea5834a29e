#pragma once

#include <cstdint>
#include <functional>

namespace advbench {

// Worker threads used by the engine. Defaults to the hardware concurrency;
// override with set_thread_count or the ADVBENCH_THREADS environment
// variable. Timing benchmarks force this to 1.
int thread_count();
void set_thread_count(int n);

// Temporarily pins the thread count; restores the previous value on scope
// exit.
class ThreadCountGuard {
 public:
  explicit ThreadCountGuard(int n);
  ~ThreadCountGuard();

 private:
  int prev_;
};

int64_t num_chunks(int64_t n, int64_t chunk_size);

// Runs fn(chunk_index, begin, end) over [0, n) split into chunks of
// chunk_size. Chunk boundaries depend only on (n, chunk_size) — never on
// the thread count — so per-chunk partial results combined in chunk order
// are bitwise reproducible on any machine configuration.
void parallel_chunks(int64_t n, int64_t chunk_size,
                     const std::function<void(int64_t, int64_t, int64_t)>& fn);

}  // namespace advbench
