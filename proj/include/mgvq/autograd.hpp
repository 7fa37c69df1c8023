#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgvq/tensor.hpp"

namespace mgvq {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Propagates the output gradient into the inputs' grad buffers.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<const NodePtr> inputs)>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  BackwardFn backward;

  // Lazily allocates a zero gradient of the value's shape.
  Tensor& grad_buffer();
};

// Handle to a node in the reverse-mode graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const std::vector<Index>& shape() const { return node_->value.shape(); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad();

  // Seeds d(self)/d(self) = 1 for a scalar root and runs the graph backward.
  // Interior nodes release their closures afterwards.
  void backward();

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Builds an op result. The node only records inputs and the closure when
// gradient recording is on and some input requires a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward);

bool grad_enabled();

// Disables graph recording for its lifetime (inference passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Named learnable tensors, in registration order.
struct NamedParameter {
  std::string name;
  Var var;
};
using ParameterList = std::vector<NamedParameter>;

Var make_parameter(Tensor init);

}  // namespace mgvq
