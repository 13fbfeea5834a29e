#include "advbench/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace advbench {
namespace {

int default_thread_count() {
  if (const char* env = std::getenv("ADVBENCH_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

std::atomic<int> g_threads{0};  // 0 = not yet resolved

thread_local bool tl_inside_pool = false;

struct JobState {
  const std::function<void(int64_t, int64_t, int64_t)>* fn = nullptr;
  int64_t n = 0, chunk_size = 0, chunks = 0;
  std::atomic<int64_t> next{0};
  std::atomic<int64_t> remaining{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex m;
  std::condition_variable done_cv;
};

// Chunks are pulled from an atomic counter; each job owns its counters so a
// late-waking worker can never touch a newer job's state. The first thrown
// exception is recorded and rethrown by the submitting thread; remaining
// chunks are drained without executing.
void work_on(JobState& job) {
  int64_t completed = 0;
  for (;;) {
    int64_t c = job.next.fetch_add(1, std::memory_order_relaxed);
    if (c >= job.chunks) break;
    if (!job.failed.load(std::memory_order_relaxed)) {
      int64_t begin = c * job.chunk_size;
      int64_t end = std::min(job.n, begin + job.chunk_size);
      try {
        (*job.fn)(c, begin, end);
      } catch (...) {
        std::lock_guard<std::mutex> lk(job.m);
        if (!job.error) job.error = std::current_exception();
        job.failed.store(true, std::memory_order_relaxed);
      }
    }
    completed++;
  }
  if (completed > 0 && job.remaining.fetch_sub(completed, std::memory_order_acq_rel) == completed) {
    std::lock_guard<std::mutex> lk(job.m);
    job.done_cv.notify_all();
  }
}

class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  void run(std::shared_ptr<JobState> job, int workers) {
    ensure_workers(workers - 1);
    std::unique_lock<std::mutex> serial(run_mutex_);  // one job at a time
    {
      std::lock_guard<std::mutex> lk(m_);
      job_ = job;
      generation_++;
    }
    cv_.notify_all();
    tl_inside_pool = true;  // no nested parallelism from the caller either
    work_on(*job);
    tl_inside_pool = false;
    {
      std::unique_lock<std::mutex> lk(job->m);
      job->done_cv.wait(lk, [&] { return job->remaining.load(std::memory_order_acquire) == 0; });
    }
    if (job->error) std::rethrow_exception(job->error);
  }

 private:
  Pool() = default;

  void ensure_workers(int want) {
    std::lock_guard<std::mutex> lk(spawn_mutex_);
    while (static_cast<int>(threads_.size()) < want) {
      threads_.emplace_back([this] { worker_loop(); });
      threads_.back().detach();
    }
  }

  void worker_loop() {
    tl_inside_pool = true;
    uint64_t seen = 0;
    for (;;) {
      std::shared_ptr<JobState> job;
      {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [&] { return generation_ != seen; });
        seen = generation_;
        job = job_;
      }
      if (job) work_on(*job);
    }
  }

  std::mutex run_mutex_;
  std::mutex spawn_mutex_;
  std::mutex m_;
  std::condition_variable cv_;
  std::vector<std::thread> threads_;
  std::shared_ptr<JobState> job_;
  uint64_t generation_ = 0;
};

}  // namespace

int thread_count() {
  int n = g_threads.load(std::memory_order_relaxed);
  if (n == 0) {
    n = default_thread_count();
    g_threads.store(n, std::memory_order_relaxed);
  }
  return n;
}

void set_thread_count(int n) { g_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed); }

ThreadCountGuard::ThreadCountGuard(int n) : prev_(thread_count()) { set_thread_count(n); }
ThreadCountGuard::~ThreadCountGuard() { set_thread_count(prev_); }

int64_t num_chunks(int64_t n, int64_t chunk_size) { return (n + chunk_size - 1) / chunk_size; }

void parallel_chunks(int64_t n, int64_t chunk_size,
                     const std::function<void(int64_t, int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  int64_t chunks = num_chunks(n, chunk_size);
  int workers = thread_count();
  if (workers <= 1 || chunks <= 1 || tl_inside_pool) {
    for (int64_t c = 0; c < chunks; ++c) {
      int64_t begin = c * chunk_size;
      fn(c, begin, std::min(n, begin + chunk_size));
    }
    return;
  }
  auto job = std::make_shared<JobState>();
  job->fn = &fn;
  job->n = n;
  job->chunk_size = chunk_size;
  job->chunks = chunks;
  job->remaining.store(chunks, std::memory_order_relaxed);
  Pool::instance().run(std::move(job), workers);
}

}  // namespace advbench
