#include "mgvq/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "mgvq/error.hpp"

namespace mgvq {

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor::Tensor(std::vector<Index> shape, double fill) : shape_(std::move(shape)) {
  Index n = 1;
  for (Index d : shape_) {
    if (d < 0) throw InvalidArgument("negative tensor dimension");
    n *= d;
  }
  data_.assign(static_cast<std::size_t>(n), fill);
}

Tensor::Tensor(std::vector<Index> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  Index n = 1;
  for (Index d : shape_) n *= d;
  if (n != static_cast<Index>(data_.size())) {
    throw InvalidArgument("tensor data size does not match shape " + shape_string());
  }
}

Index Tensor::rows() const { return shape_.empty() ? 1 : shape_[0]; }

Index Tensor::cols() const {
  if (shape_.empty()) return 1;
  Index n = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) n *= shape_[i];
  return n;
}

double Tensor::item() const {
  if (data_.size() != 1) throw InvalidArgument("item() on tensor of shape " + shape_string());
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<Index> shape) const {
  Index n = 1;
  for (Index d : shape) n *= d;
  if (n != size()) throw InvalidArgument("reshape to " + std::to_string(n) + " elements from " + shape_string());
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

Tensor& Node::grad_buffer() {
  if (grad.empty() && value.size() > 0) grad = Tensor(value.shape(), 0.0);
  if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

void Var::backward() {
  if (!node_) throw InvalidArgument("backward() on undefined Var");
  if (node_->value.size() != 1) throw InvalidArgument("backward() requires a scalar root");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && !child->inputs.empty() && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(n->grad, n->inputs);
  }
  for (Node* n : order) {
    n->backward = nullptr;
    n->inputs.clear();
  }
}

Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (auto& v : inputs) node.inputs.push_back(v.node());
  node.backward = std::move(backward);
  return out;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_parameter(Tensor init) { return Var(std::move(init), true); }

}  // namespace mgvq
