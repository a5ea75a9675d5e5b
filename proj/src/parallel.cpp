#include "i3d/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace i3d {
namespace {

std::atomic<int> g_threads{0};

int default_threads() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace

void set_num_threads(int n) { g_threads = std::max(1, n); }

int num_threads() {
  int n = g_threads.load();
  return n > 0 ? n : default_threads();
}

int workers_for(int64_t count) {
  return static_cast<int>(std::max<int64_t>(1, std::min<int64_t>(num_threads(), count)));
}

void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t, int)>& fn) {
  const int64_t count = end - begin;
  if (count <= 0) return;
  const int workers = workers_for(count);
  if (workers == 1) {
    for (int64_t i = begin; i < end; ++i) fn(i, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  const int64_t chunk = (count + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int64_t lo = begin + w * chunk;
    const int64_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, w, &fn] {
      for (int64_t i = lo; i < hi; ++i) fn(i, w);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace i3d
