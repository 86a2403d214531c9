#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "tmaseg/tensor.hpp"

namespace tmaseg::ad {

enum class Mode { Train, Eval };

/// A trainable tensor with its gradient accumulator and Adam moments.
struct Parameter {
  Tensor value;
  Tensor grad;  // empty until a backward pass reaches it
  Tensor m;
  Tensor v;

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

class Graph;

// Lightweight handle to a node recorded on a Graph.
class Var {
 public:
  Var() = default;

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Graph;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Analytic receptive field carried along every node: `size` input pixels
// influence one output pixel, and adjacent output pixels are `jump` input
// pixels apart.
struct ReceptiveField {
  double size = 1.0;
  double jump = 1.0;
};

// Tape-style reverse-mode recorder. Nodes are appended in evaluation order,
// so replaying them backwards is a valid topological order. One Graph per
// forward pass; a Graph is not shared between threads.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad = true);
  /// Leaf whose gradient is accumulated into `p.grad` by backward().
  Var parameter(Parameter& p);

  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward, ReceptiveField rf);

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const { return node(v).grad; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  ReceptiveField receptive_field(Var v) const { return node(v).rf; }

  /// Gradient accumulator for `v`, allocated on first use; nullptr when no
  /// gradient needs to flow into `v`.
  Tensor* grad_sink(Var v);

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
    ReceptiveField rf;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  Var push(std::unique_ptr<Node> n);

  std::vector<std::unique_ptr<Node>> nodes_;
  bool backward_done_ = false;
};

}  // namespace tmaseg::ad
