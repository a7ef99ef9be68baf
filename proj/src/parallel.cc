#include "oslo/parallel.h"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace oslo {

int worker_count() {
  static const int count = [] {
    if (const char* env = std::getenv("OSLO_THREADS")) {
      int v = std::atoi(env);
      if (v > 0) return v;
    }
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  }();
  return count;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
  if (n <= 0) return;
  // Small loops are not worth a thread spawn.
  const int64_t workers = std::min<int64_t>(worker_count(), std::max<int64_t>(1, n / 256));
  if (workers <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  const int64_t chunk = (n + workers - 1) / workers;
  for (int64_t w = 1; w < workers; ++w) {
    const int64_t b = w * chunk;
    const int64_t e = std::min(n, b + chunk);
    if (b < e) threads.emplace_back(body, b, e);
  }
  body(0, std::min(n, chunk));
  for (auto& t : threads) t.join();
}

}  // namespace oslo
