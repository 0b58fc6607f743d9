#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace parcelse {

// Worker cap used by parallel_for. Defaults to hardware concurrency.
void set_max_threads(unsigned n);
unsigned max_threads();

// Calls fn(i) for every i in [0, n) on up to max_threads() workers.
// Callers write results into slot i only, so output never depends on the
// schedule. If any call throws, the exception from the smallest index is
// rethrown after all workers stop.
// Nested calls from inside a worker run serially on that worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Recursive pairwise summation with a fixed split rule: the result depends on
// the values and their order only.
double pairwise_sum(std::span<const double> values);

}  // namespace parcelse
