#pragma once

// Data-parallel inner loops. Each kernel has a serial reference that the
// OpenMP version must reproduce bit-for-bit; tests compare the two.

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace posevocab::kernels {

enum class Execution { kSerial, kParallel };

struct ArgMax {
  std::size_t index = 0;
  double value = -std::numeric_limits<double>::infinity();

  // Larger value wins; equal values resolve to the lower index.
  void merge(const ArgMax& other) {
    if (other.value > value || (other.value == value && other.index < index)) *this = other;
  }
};

/// min_dist[i] = min(min_dist[i], dist(i)) and returns the argmax of the
/// updated array.
template <class DistFn>
ArgMax relax_min_distances_serial(std::span<double> min_dist, DistFn&& dist) {
  ArgMax best;
  for (std::size_t i = 0; i < min_dist.size(); ++i) {
    const double d = dist(i);
    if (d < min_dist[i]) min_dist[i] = d;
    best.merge(ArgMax{i, min_dist[i]});
  }
  return best;
}

template <class DistFn>
ArgMax relax_min_distances_parallel(std::span<double> min_dist, DistFn&& dist) {
  ArgMax best;
  const auto n = static_cast<std::ptrdiff_t>(min_dist.size());
#pragma omp parallel
  {
    ArgMax local;
#pragma omp for schedule(static) nowait
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      const double d = dist(u);
      if (d < min_dist[u]) min_dist[u] = d;
      local.merge(ArgMax{u, min_dist[u]});
    }
#pragma omp critical(posevocab_argmax)
    best.merge(local);
  }
  return best;
}

template <class DistFn>
ArgMax relax_min_distances(Execution exec, std::span<double> min_dist, DistFn&& dist) {
  if (exec == Execution::kParallel) return relax_min_distances_parallel(min_dist, dist);
  return relax_min_distances_serial(min_dist, dist);
}

/// Greedy farthest-point sampling over n items under a caller-supplied
/// metric dist(i, j). Starts from item 0 and picks items whose distance to
/// every selected item exceeds `tolerance`, so near-duplicates are never
/// selected and fewer than `count` indices come back when the input has
/// fewer distinct items.
template <class PairDistFn>
std::vector<std::size_t> farthest_point_indices(std::size_t n, std::size_t count,
                                                double tolerance, Execution exec,
                                                PairDistFn&& dist) {
  std::vector<std::size_t> picked;
  if (n == 0 || count == 0) return picked;
  picked.push_back(0);
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  while (picked.size() < count) {
    const std::size_t last = picked.back();
    const ArgMax best =
        relax_min_distances(exec, std::span<double>(min_dist),
                            [&](std::size_t i) { return dist(i, last); });
    if (!(best.value > tolerance)) break;
    picked.push_back(best.index);
  }
  return picked;
}

}  // namespace posevocab::kernels
