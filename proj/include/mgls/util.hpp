#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace mgls {

/// Runs fn(i) for i in [0, count). With parallel=true the range is split
/// across hardware threads; results must not depend on execution order.
inline void parallel_for(std::size_t count, bool parallel, const std::function<void(std::size_t)>& fn)
{
  if (count == 0) return;
  unsigned hw = std::thread::hardware_concurrency();
  if (!parallel || hw <= 1 || count == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  unsigned workers = static_cast<unsigned>(std::min<std::size_t>(hw, count));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned t = 0; t < workers; ++t) {
    pool.emplace_back([&, t]() {
      for (std::size_t i = t; i < count; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

/// FNV-1a, used for scenario digests in run reports.
inline std::uint64_t fnv1a(const std::string& data)
{
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace mgls
