#pragma once

#include <cstddef>
#include <functional>

namespace mvsgs {

// Global worker count used by parallel_for. 0 picks hardware concurrency.
void set_thread_count(int n);
int thread_count();

// Runs fn(i) for every i in [begin, end). Each index must write to disjoint
// state; the schedule is unspecified, so results must not depend on ordering.
void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)>& fn);

}  // namespace mvsgs
