#include "posemb/tape.hpp"

#include <algorithm>
#include <string>

#include "posemb/errors.hpp"

namespace posemb {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  node.op = "constant";
  return push(std::move(node));
}

Var Tape::parameter(Tensor& param) {
  if (auto it = bound_.find(&param); it != bound_.end()) return Var(this, it->second);
  Node node;
  node.param = &param;
  node.needs_grad = track_gradients_ && param.requires_grad();
  node.op = "parameter";
  Var v = push(std::move(node));
  bound_.emplace(&param, v.id());
  return v;
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (&p.tape() != this) throw ContractError(std::string(op) + ": operand recorded on a different tape");
    if (p.id() >= nodes_.size()) throw ContractError(std::string(op) + ": operand is not yet recorded");
    needs = needs || nodes_[p.id()].needs_grad;
  }
  if (!value.all_finite()) throw NonFiniteError(std::string(op));
  Node node;
  node.owned = std::move(value);
  node.needs_grad = needs;
  if (needs) node.backward = std::move(backward);
  node.op = op;
  return push(std::move(node));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.param ? *node.param : node.owned;
}

std::span<double> Tape::grad_sink(Var v) {
  Node& node = nodes_[v.id()];
  if (node.grad.empty()) node.grad.assign(value(v.id()).size(), 0.0);
  return node.grad;
}

std::vector<double> Tape::gradient(Var v) const {
  const Node& node = nodes_.at(v.id());
  if (node.grad.empty()) return std::vector<double>(value(v.id()).size(), 0.0);
  return node.grad;
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw ContractError("backward: root belongs to a different tape");
  if (value(root.id()).size() != 1) {
    throw ContractError("backward: root must be a scalar, got shape " + shape_string(value(root.id()).shape()));
  }
  for (auto& node : nodes_) node.grad.clear();
  nodes_[root.id()].grad.assign(1, 1.0);

  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty() || !node.needs_grad) continue;
    if (node.param) {
      auto sink = node.param->grad();
      for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += node.grad[i];
    } else if (node.backward) {
      node.backward(*this, id);
    }
  }
}

}  // namespace posemb
