#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace dmlkit {

// Runs fn(0..n_tasks-1) on up to `threads` workers pulling from a shared
// counter. Tasks must write to disjoint slots; results are then identical at
// any worker count. The lowest-index exception wins and is rethrown here.
inline void parallel_for(int n_tasks, int threads, const std::function<void(int)>& fn) {
  if (n_tasks <= 0) return;
  const int workers = std::min(threads < 1 ? 1 : threads, n_tasks);
  if (workers == 1) {
    for (int t = 0; t < n_tasks; ++t) fn(t);
    return;
  }
  std::vector<std::exception_ptr> errors(n_tasks);
  std::atomic<int> next{0};
  auto body = [&]() {
    for (;;) {
      const int t = next.fetch_add(1);
      if (t >= n_tasks) return;
      try {
        fn(t);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace dmlkit
