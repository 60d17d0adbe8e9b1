#include "ccnn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "ccnn/errors.hpp"
#include "json.hpp"

namespace ccnn {

std::string BenchReport::to_json() const {
  nlohmann::json j;
  j["image_size"] = {height, width};
  j["warmup_runs"] = warmup_runs;
  j["timed_runs"] = timed_runs;
  j["thread_count"] = thread_count;
  j["latencies"] = latencies;
  j["total_seconds"] = total_seconds;
  j["fps"] = fps;
  j["mean_latency"] = mean_latency;
  j["median_latency"] = median_latency;
  j["p95_latency"] = p95_latency;
  j["output_sum"] = output_sum;
  j["build"] = {{"compiler", compiler}, {"build_type", build_type}, {"version", version}};
  return j.dump();
}

void summarize(BenchReport& report) {
  const auto& lat = report.latencies;
  if (lat.empty()) throw InvalidArgument("summarize: no latencies");
  report.timed_runs = static_cast<int>(lat.size());
  report.total_seconds = std::accumulate(lat.begin(), lat.end(), 0.0);
  report.fps = static_cast<double>(lat.size()) / report.total_seconds;
  report.mean_latency = report.total_seconds / static_cast<double>(lat.size());

  std::vector<double> sorted = lat;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  report.median_latency = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  report.p95_latency = sorted[std::clamp<std::size_t>(rank, 1, n) - 1];
}

BenchReport bench_forward(const ModelParams& params, const CCNNConfig& config, std::size_t height,
                          std::size_t width, int warmup, int runs, int threads, std::uint64_t seed) {
  if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
    throw InvalidArgument("bench: image size " + std::to_string(height) + "x" + std::to_string(width) +
                          " must be divisible by 8");
  }
  if (runs < 1) throw InvalidArgument("bench: runs must be >= 1");
  if (warmup < 0) throw InvalidArgument("bench: warmup must be >= 0");
  if (threads < 1) throw InvalidArgument("bench: threads must be >= 1");

  Tensor image(Shape{1, config.input_channels, height, width});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> pixel(0.0f, 1.0f);
  for (float& v : image.data()) v = pixel(rng);

  const ComputeOptions opts{threads};
  for (int i = 0; i < warmup; ++i) (void)forward(params, config, image, opts);

  BenchReport report;
  report.height = height;
  report.width = width;
  report.warmup_runs = warmup;
  report.thread_count = threads;
  report.latencies.reserve(static_cast<std::size_t>(runs));
  Tensor out;
  for (int i = 0; i < runs; ++i) {
    const auto start = std::chrono::steady_clock::now();
    out = forward(params, config, image, opts);
    const auto stop = std::chrono::steady_clock::now();
    // steady_clock resolution is finite; a zero reading is clamped to one tick.
    const double seconds = std::chrono::duration<double>(stop - start).count();
    report.latencies.push_back(seconds > 0.0 ? seconds : 1e-9);
  }
  report.output_sum = out.sum();
  summarize(report);

#if defined(__clang__)
  report.compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  report.compiler = "gcc " __VERSION__;
#else
  report.compiler = "unknown";
#endif
  report.build_type = CCNN_BUILD_TYPE;
  report.version = CCNN_VERSION_STRING;
  return report;
}

}  // namespace ccnn
