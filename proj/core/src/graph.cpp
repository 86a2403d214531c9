#include "tmaseg/graph.hpp"

#include <string>

#include "tmaseg/error.hpp"

namespace tmaseg::ad {

const Tensor& Var::value() const {
  if (!graph_) throw Error(ErrorCode::InvalidArgument, "use of an empty Var");
  return graph_->value(*this);
}

const Graph::Node& Graph::node(Var v) const {
  if (v.graph_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size()) {
    throw Error(ErrorCode::InvalidArgument, "Var does not belong to this graph");
  }
  return *nodes_[static_cast<std::size_t>(v.id_)];
}

Graph::Node& Graph::node(Var v) {
  return const_cast<Node&>(static_cast<const Graph&>(*this).node(v));
}

Var Graph::push(std::unique_ptr<Node> n) {
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::constant(Tensor value) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  return push(std::move(n));
}

Var Graph::input(Tensor value, bool requires_grad) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return push(std::move(n));
}

Var Graph::parameter(Parameter& p) {
  auto n = std::make_unique<Node>();
  n->value = p.value;
  n->requires_grad = true;
  n->param = &p;
  return push(std::move(n));
}

Var Graph::record(Tensor value, const std::vector<Var>& parents, BackwardFn backward, ReceptiveField rf) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  n->rf = rf;
  for (const auto& p : parents) {
    if (p.valid() && node(p).requires_grad) n->requires_grad = true;
  }
  if (n->requires_grad) n->backward = std::move(backward);
  return push(std::move(n));
}

Tensor* Graph::grad_sink(Var v) {
  if (!v.valid()) return nullptr;
  Node& n = node(v);
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

void Graph::backward(Var loss) {
  Node& root = node(loss);
  if (root.value.size() != 1) {
    throw Error(ErrorCode::NotScalar, "backward needs a scalar loss, got shape " + shape_string(root.value.shape()));
  }
  if (backward_done_) throw Error(ErrorCode::InvalidArgument, "backward already ran on this graph");
  backward_done_ = true;
  if (!root.requires_grad) return;
  grad_sink(loss)->fill(Real(1));
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = *nodes_[static_cast<std::size_t>(i)];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) {
      if (n.param->grad.empty()) {
        n.param->grad = n.grad;
      } else {
        n.param->grad.add_(n.grad);
      }
    }
  }
}

}  // namespace tmaseg::ad
