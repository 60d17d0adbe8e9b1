#include "ccnn/grad_tape.hpp"

#include <algorithm>
#include <string>

#include "ccnn/errors.hpp"

namespace ccnn {

Var GradTape::push(Tensor value, std::function<void(GradTape&, const Node&)> backward) {
  nodes_.push_back(Node{std::move(value), Tensor{}, std::move(backward)});
  has_gradients_ = false;
  return Var{nodes_.size() - 1};
}

void GradTape::check(Var v) const {
  if (v.id >= nodes_.size()) {
    throw InvalidArgument("tape variable " + std::to_string(v.id) + " was not recorded on this tape");
  }
}

void GradTape::accumulate(Var v, const Tensor& g) {
  Node& node = nodes_[v.id];
  if (node.grad.empty()) {
    node.grad = g;
    return;
  }
  auto dst = node.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Var GradTape::input(Tensor value) { return push(std::move(value), nullptr); }

Var GradTape::conv2d(Var x, const ConvLayer& layer, ConvGrads& grads) {
  check(x);
  if (grads.weights.size() != layer.weights.size() || grads.bias.size() != layer.bias.size()) {
    throw InvalidArgument("conv2d: gradient sink is not congruent to the layer parameters");
  }
  Tensor out = conv2d_forward(nodes_[x.id].value, layer, opts_);
  return push(std::move(out), [x, &layer, &grads](GradTape& tape, const Node& self) {
    ConvBackward g = conv2d_backward(tape.nodes_[x.id].value, layer, self.grad, tape.opts_);
    for (std::size_t i = 0; i < grads.weights.size(); ++i) grads.weights[i] += g.params.weights[i];
    for (std::size_t i = 0; i < grads.bias.size(); ++i) grads.bias[i] += g.params.bias[i];
    tape.accumulate(x, g.input);
  });
}

Var GradTape::relu(Var x) {
  check(x);
  return push(relu_forward(nodes_[x.id].value), [x](GradTape& tape, const Node& self) {
    tape.accumulate(x, relu_backward(tape.nodes_[x.id].value, self.grad));
  });
}

Var GradTape::maxpool2x2(Var x) {
  check(x);
  return push(maxpool2x2_forward(nodes_[x.id].value), [x](GradTape& tape, const Node& self) {
    tape.accumulate(x, maxpool2x2_backward(tape.nodes_[x.id].value, self.grad));
  });
}

Var GradTape::concat(std::span<const Var> parts) {
  std::vector<Tensor> values;
  std::vector<Var> ids(parts.begin(), parts.end());
  std::vector<std::size_t> channels;
  values.reserve(parts.size());
  for (Var p : parts) {
    check(p);
    values.push_back(nodes_[p.id].value);
    channels.push_back(nodes_[p.id].value.shape().c);
  }
  Tensor out = concat_channels(values);
  return push(std::move(out), [ids, channels](GradTape& tape, const Node& self) {
    std::vector<Tensor> pieces = split_channels(self.grad, channels);
    for (std::size_t i = 0; i < ids.size(); ++i) tape.accumulate(ids[i], pieces[i]);
  });
}

Var GradTape::euclidean_loss(Var pred, Tensor target) {
  check(pred);
  const double loss = ccnn::euclidean_loss(nodes_[pred.id].value, target);
  Tensor out(Shape{1, 1, 1, 1}, static_cast<float>(loss));
  return push(std::move(out), [pred, target = std::move(target)](GradTape& tape, const Node& self) {
    tape.accumulate(pred, euclidean_loss_backward(tape.nodes_[pred.id].value, target, self.grad[0]));
  });
}

const Tensor& GradTape::value(Var v) const {
  check(v);
  return nodes_[v.id].value;
}

void GradTape::backward(Var out) {
  if (nodes_.empty()) throw StateError("backward called before any forward pass was recorded");
  check(out);
  if (nodes_[out.id].value.size() != 1) {
    throw InvalidArgument("backward target must be a scalar, got shape " +
                          nodes_[out.id].value.shape().to_string());
  }
  for (Node& node : nodes_) node.grad = Tensor{};
  nodes_[out.id].grad = Tensor(nodes_[out.id].value.shape(), 1.0f);
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.empty() || !node.backward) continue;
    node.backward(*this, node);
  }
  for (Node& node : nodes_) {
    if (node.grad.empty()) node.grad = Tensor(node.value.shape());
  }
  has_gradients_ = true;
}

const Tensor& GradTape::grad(Var v) const {
  check(v);
  if (!has_gradients_) throw StateError("gradient requested before backward()");
  return nodes_[v.id].grad;
}

}  // namespace ccnn
