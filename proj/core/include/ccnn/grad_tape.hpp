#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ccnn/layers.hpp"
#include "ccnn/parallel.hpp"
#include "ccnn/tensor.hpp"

namespace ccnn {

/// Handle to a value recorded on a GradTape.
struct Var {
  std::size_t id = 0;
};

/// Records primitive applications in execution order and replays them in
/// reverse to obtain gradients of a scalar.
///
/// Layers passed to conv2d() and their gradient sinks are referenced, not
/// copied; they must outlive the call to backward(). Parameter gradients are
/// accumulated (+=) into the sinks, so callers zero them between steps.
class GradTape {
 public:
  explicit GradTape(ComputeOptions opts = {}) : opts_(opts) {}

  Var input(Tensor value);

  Var conv2d(Var x, const ConvLayer& layer, ConvGrads& grads);
  Var relu(Var x);
  Var maxpool2x2(Var x);
  Var concat(std::span<const Var> parts);
  /// Scalar node (shape 1x1x1x1) holding the batch Euclidean loss against `target`.
  Var euclidean_loss(Var pred, Tensor target);

  const Tensor& value(Var v) const;

  /// Seeds d(out)/d(out) = 1 and propagates to every recorded node.
  /// Throws StateError if nothing was recorded, InvalidArgument if `out`
  /// is not a scalar.
  void backward(Var out);

  /// Gradient of the last backward() target w.r.t. `v`. Nodes the target
  /// does not depend on report an all-zero tensor.
  const Tensor& grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(GradTape&, const Node&)> backward;
  };

  Var push(Tensor value, std::function<void(GradTape&, const Node&)> backward);
  void check(Var v) const;
  void accumulate(Var v, const Tensor& g);

  ComputeOptions opts_;
  std::vector<Node> nodes_;
  bool has_gradients_ = false;
};

}  // namespace ccnn
