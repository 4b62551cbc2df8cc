#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace chroma {

// Worker budget for file-level parallelism (prepare, evaluate). Training and
// tensor ops stay single-threaded; reproducibility there is the contract.
// CHROMA_THREADS caps the count; invalid or missing values fall back to the
// hardware default.
inline int worker_count() {
  unsigned n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (n > 8) n = 8;
  if (const char* env = std::getenv("CHROMA_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1 && cap < 1024) {
      if (static_cast<unsigned>(cap) < n) n = static_cast<unsigned>(cap);
    }
  }
  return static_cast<int>(n);
}

// Runs f(i) for i in [0, n). Work items must be independent; completion order
// is unspecified, so callers index results rather than appending.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
  const int workers = worker_count();
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t stride = static_cast<std::size_t>(workers);
  for (std::size_t w = 0; w < stride; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += stride) f(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace chroma
