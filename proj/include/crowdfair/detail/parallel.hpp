#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace crowdfair::detail {

// Chunk size is fixed (not derived from the thread count) so that any
// per-chunk partial results combine in the same order no matter how many
// threads run. That is what makes results bit-identical for every --threads.
inline constexpr std::int64_t kParallelChunk = 1024;

// Runs chunk_fn(begin, end) over [0, n) split into fixed-size chunks.
// chunk_fn must only write to per-index or per-chunk slots.
template <typename ChunkFn>
void parallel_chunks(std::int64_t n, int threads, ChunkFn&& chunk_fn) {
  if (n <= 0) return;
  const std::int64_t n_chunks = (n + kParallelChunk - 1) / kParallelChunk;
  if (threads <= 1 || n_chunks == 1) {
    for (std::int64_t c = 0; c < n_chunks; ++c) {
      chunk_fn(c, c * kParallelChunk, std::min(n, (c + 1) * kParallelChunk));
    }
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::int64_t c = next.fetch_add(1);
      if (c >= n_chunks || failed.load()) return;
      try {
        chunk_fn(c, c * kParallelChunk, std::min(n, (c + 1) * kParallelChunk));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  const int n_threads = static_cast<int>(std::min<std::int64_t>(threads, n_chunks));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Runs fn(i) for i in [0, n) with one task per index (for small n of heavy,
// independent jobs — e.g. experiment repeats writing to their own slots).
template <typename Fn>
void parallel_indexed(std::int64_t n, int threads, Fn&& fn) {
  if (n <= 0) return;
  if (threads <= 1 || n == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::int64_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  const int n_threads = static_cast<int>(std::min<std::int64_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Deterministic parallel reduction: per-chunk partial sums accumulated
// sequentially within a chunk, then combined in chunk order.
template <typename TermFn>
double deterministic_sum(std::int64_t n, int threads, TermFn&& term) {
  if (n <= 0) return 0.0;
  const std::int64_t n_chunks = (n + kParallelChunk - 1) / kParallelChunk;
  std::vector<double> partial(static_cast<std::size_t>(n_chunks), 0.0);
  parallel_chunks(n, threads, [&](std::int64_t c, std::int64_t b, std::int64_t e) {
    double s = 0.0;
    for (std::int64_t i = b; i < e; ++i) s += term(i);
    partial[static_cast<std::size_t>(c)] = s;
  });
  double total = 0.0;
  for (double s : partial) total += s;
  return total;
}

}  // namespace crowdfair::detail
