#include "ccnn/adam.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ccnn/errors.hpp"

namespace ccnn {

AdamState AdamState::for_size(std::size_t size, double lr) {
  AdamState state;
  state.first_moment.assign(size, 0.0f);
  state.second_moment.assign(size, 0.0f);
  state.lr = lr;
  return state;
}

void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw InvalidArgument("adam_step: length mismatch (params " + std::to_string(params.size()) +
                          ", grads " + std::to_string(grads.size()) + ", moments " +
                          std::to_string(state.first_moment.size()) + "/" +
                          std::to_string(state.second_moment.size()) + ")");
  }

  ++state.step_count;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const auto t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(b1, t);
  const double correction2 = 1.0 - std::pow(b2, t);
  const bool zero_gradient = std::all_of(grads.begin(), grads.end(), [](float g) { return g == 0.0f; });

  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = b1 * state.first_moment[i] + (1.0 - b1) * g;
    const double v = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
    state.first_moment[i] = static_cast<float>(m);
    state.second_moment[i] = static_cast<float>(v);
    if (zero_gradient) continue;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] = static_cast<float>(params[i] - state.lr * m_hat / (std::sqrt(v_hat) + state.eps));
  }
}

}  // namespace ccnn
