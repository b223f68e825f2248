#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace homog {

/// Worker count used by path-parallel loops. 0 means hardware concurrency.
void set_thread_count(unsigned threads);
unsigned thread_count();

/// Runs body(i) for i in [0, count) on up to thread_count() workers. Each index
/// is processed exactly once; callers write results into per-index slots so the
/// outcome does not depend on the worker count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

/// Neumaier-compensated sum in index order.
double compensated_sum(std::span<const double> values);

/// Mean and standard error (sample std / sqrt(N)) of per-path values.
struct SampleStats {
  double mean = 0.0;
  double std_error = 0.0;
  double variance = 0.0;
  std::size_t count = 0;
};
SampleStats sample_stats(std::span<const double> values);

}  // namespace homog
