#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ccnn/model.hpp"

namespace ccnn {

struct BenchReport {
  std::size_t height = 0;
  std::size_t width = 0;
  int warmup_runs = 0;
  int timed_runs = 0;
  int thread_count = 1;
  std::vector<double> latencies;  ///< seconds, steady clock, one per timed run
  double total_seconds = 0.0;
  double fps = 0.0;  ///< timed_runs / total_seconds
  double mean_latency = 0.0;
  double median_latency = 0.0;
  double p95_latency = 0.0;
  /// Sum of the density map from the last timed run.
  double output_sum = 0.0;
  std::string compiler;
  std::string build_type;
  std::string version;

  std::string to_json() const;
};

/// Times `runs` batch-1 forward passes on a fixed pseudo-random image after
/// `warmup` untimed ones. Only the forward call is inside the timed region.
BenchReport bench_forward(const ModelParams& params, const CCNNConfig& config, std::size_t height,
                          std::size_t width, int warmup, int runs, int threads = 1, std::uint64_t seed = 0);

/// Fills latency statistics and fps from `latencies`.
void summarize(BenchReport& report);

}  // namespace ccnn
