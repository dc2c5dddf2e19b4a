#pragma once

#include <cstddef>
#include <functional>

#include <Eigen/Core>

namespace ilad::par {

// Worker cap. Starts from ILAD_THREADS (or OpenMP default); 1 = serial
// reference path. Every kernel is bit-identical for any thread count: tasks
// write to private slots, reductions run in fixed index order.
int max_threads();
void set_max_threads(int n);

// Run fn(i) for i in [0, n). Uses OpenMP when max_threads() > 1.
void for_each(std::size_t n, const std::function<void(std::size_t)>& fn);

// Deterministic sum of per-index vector contributions. Indices are grouped
// into a fixed number of chunks independent of the thread count; each chunk
// accumulates serially in ascending order, then chunks are added in order.
// fn(i, acc) must add index i's contribution into acc.
Eigen::VectorXd ordered_sum(std::size_t n, Eigen::Index dim,
                            const std::function<void(std::size_t, Eigen::VectorXd&)>& fn);

inline constexpr int kOrderedSumChunks = 16;

}  // namespace ilad::par
