#pragma once

#include <cstddef>
#include <functional>

namespace ccnn {

/// Internal parallelism of the numeric kernels. Results for a given
/// thread count are bitwise reproducible; threads == 1 runs inline.
struct ComputeOptions {
  int threads = 1;
};

/// Runs body(i) for i in [0, count), spread over up to `threads` workers.
/// Work items are assigned in contiguous blocks, so each index is always
/// processed by exactly one call with no shared accumulation.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body);

}  // namespace ccnn
