#pragma once

#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace nfr {

/// Thread cap from NFRLAB_THREADS (0 or unset = auto).
inline int thread_budget() {
  const char* env = std::getenv("NFRLAB_THREADS");
  int cap = 0;
  if (env && *env) cap = std::atoi(env);
  if (cap <= 0) {
    cap = static_cast<int>(std::thread::hardware_concurrency());
    if (cap <= 0) cap = 1;
  }
  return cap;
}

/// Runs f(0..n-1), each index exactly once, results slotted by the caller.
/// Scheduling never affects results: every trial derives its own seed from
/// the master seed and its index.
inline void parallel_for(int n, const std::function<void(int)>& f) {
  const int workers = std::min(thread_budget(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) f(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace nfr
