#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ccnn {

struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<float> first_moment;
  std::vector<float> second_moment;
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Fresh state tracking a parameter vector of length `size`.
  static AdamState for_size(std::size_t size, double lr = 1e-5);
};

/// One bias-corrected Adam update of `params` in place.
///
/// An all-zero gradient vector leaves the parameters untouched (moments
/// still decay and step_count still advances). Throws InvalidArgument when
/// params, grads and moments are not the same length.
void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state);

}  // namespace ccnn
