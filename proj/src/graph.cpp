#include "bms/graph.hpp"

#include <cmath>
#include <stdexcept>

#include "bms/simd/kernels.hpp"

namespace bms::ad {

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, nullptr, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::parameter(Parameter& param) {
  nodes_.push_back(Node{param.value, {}, true, &param, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::record(Tensor value, bool requires_grad, BackwardFn fn) {
  if (!requires_grad) fn = nullptr;
  nodes_.push_back(Node{std::move(value), {}, requires_grad, nullptr, std::move(fn)});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.size() != n.value.size()) return Tensor(n.value.shape());
  return n.grad;
}

Tensor& Graph::grad_slot(Var v) { return grad_slot(v.id()); }

Tensor& Graph::grad_slot(std::uint32_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
    n.grad = Tensor(n.value.shape());
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (consumed_) throw std::logic_error("backward: graph already differentiated");
  const Node& root = nodes_.at(loss.id());
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     to_string(root.value.shape()));
  }
  if (!std::isfinite(root.value[0])) {
    throw DomainError("backward: non-finite loss");
  }
  consumed_ = true;
  if (!root.requires_grad) return;
  grad_slot(loss).fill(1.0);

  const auto& k = simd::kernels();
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() != n.value.size()) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
    } else if (n.param != nullptr) {
      Tensor& target = n.param->grad;
      if (target.shape() != n.value.shape()) target = Tensor(n.value.shape());
      k.axpy(target.size(), 1.0, n.grad.raw(), target.raw());
    }
  }
}

}  // namespace bms::ad
