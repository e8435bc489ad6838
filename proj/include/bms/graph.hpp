#pragma once

// Tape-based reverse-mode automatic differentiation.
//
// A Graph is rebuilt for every update: operations append nodes in evaluation
// order, so the append order is already a topological order and backward()
// is a single reverse sweep. A Graph is confined to one thread.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bms/tensor.hpp"

namespace bms::ad {

/// A trainable array owned outside any graph. Graph::parameter() exposes it as
/// a leaf; backward() adds the leaf gradient into `grad`.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() == value.shape()) {
      grad.fill(0.0);
    } else {
      grad = Tensor(value.shape());
    }
  }
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Graph& graph() const { return *graph_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, std::uint32_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

class Graph {
 public:
  /// Called with the gradient flowing into the node; pushes gradient into the
  /// node's inputs through grad_slot().
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf that receives a gradient, readable through grad() after backward().
  Var variable(Tensor value);
  /// Leaf bound to an external parameter.
  Var parameter(Parameter& param);

  /// Appends an operation result. `fn` is dropped when no input needs a
  /// gradient.
  Var record(Tensor value, bool requires_grad, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

  /// Gradient of the last backward() target w.r.t. `v`; zeros when no
  /// gradient reached it.
  Tensor grad(Var v) const;

  /// Accumulator for the gradient of `v`, allocated on first use.
  Tensor& grad_slot(Var v);
  Tensor& grad_slot(std::uint32_t id);

  /// Reverse sweep from a scalar loss. The loss must be finite; a graph can be
  /// differentiated once.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  Var node(std::uint32_t id) { return Var(this, id); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return graph_->value(*this); }
inline bool Var::requires_grad() const { return graph_->requires_grad(*this); }

}  // namespace bms::ad
