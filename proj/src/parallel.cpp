#include "ilad/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ilad::par {

namespace {

int initial_threads() {
  if (const char* env = std::getenv("ILAD_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

int& thread_cap() {
  static int cap = initial_threads();
  return cap;
}

}  // namespace

int max_threads() { return thread_cap(); }

void set_max_threads(int n) { thread_cap() = std::max(1, n); }

void for_each(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const int threads = std::min<std::size_t>(thread_cap(), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    fn(static_cast<std::size_t>(i));
  }
#else
  for (std::size_t i = 0; i < n; ++i) fn(i);
#endif
}

Eigen::VectorXd ordered_sum(std::size_t n, Eigen::Index dim,
                            const std::function<void(std::size_t, Eigen::VectorXd&)>& fn) {
  const std::size_t chunks = std::min<std::size_t>(kOrderedSumChunks, std::max<std::size_t>(n, 1));
  std::vector<Eigen::VectorXd> partial(chunks, Eigen::VectorXd::Zero(dim));
  for_each(chunks, [&](std::size_t c) {
    const std::size_t lo = n * c / chunks;
    const std::size_t hi = n * (c + 1) / chunks;
    for (std::size_t i = lo; i < hi; ++i) fn(i, partial[c]);
  });
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim);
  for (std::size_t c = 0; c < chunks; ++c) out += partial[c];
  return out;
}

}  // namespace ilad::par
