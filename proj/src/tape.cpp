#include "oodattack/tape.hpp"

#include "oodattack/errors.hpp"

namespace oodattack {

Parameter::Parameter(std::string n, Tensor v, bool t)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(t) {}

void Parameter::zero_grad() {
  if (!grad.same_shape(value)) grad = Tensor(value.shape());
  for (double& g : grad.data()) g = 0.0;
}

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.borrowed = &value;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(const Parameter& p) {
  const bool tracked = track_parameters_ && p.trainable;
  // A parameter bound twice shares one node so its gradient accumulates over every use.
  if (tracked) {
    auto it = parameter_nodes_.find(&p);
    if (it != parameter_nodes_.end()) return {this, it->second};
  }
  Node n;
  n.borrowed = &p.value;
  n.requires_grad = tracked;
  nodes_.push_back(std::move(n));
  const std::size_t id = nodes_.size() - 1;
  if (tracked) parameter_nodes_[&p] = id;
  return {this, id};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (std::size_t i : inputs) {
    if (i >= nodes_.size()) throw ContractError("tape input refers to a node that does not precede it");
    n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.borrowed ? *n.borrowed : n.value;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  Tensor& buf = grads_[id];
  if (buf.size() == 0 && value(id).size() != 0) {
    buf = g;
    return;
  }
  auto dst = buf.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Tensor& buf = grads_[id];
  if (buf.size() == 0) buf = Tensor(value(id).shape());
  return buf;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward on a node from another tape");
  const Tensor& out = value(loss);
  if (out.size() != 1) throw ContractError("backward requires a scalar loss, got shape " + shape_string(out.shape()));
  if (backward_done_) throw ContractError("backward already ran on this tape");
  backward_done_ = true;
  grads_.assign(nodes_.size(), Tensor());
  visited_ = 0;
  if (!nodes_[loss.id].requires_grad) return;
  grads_[loss.id] = Tensor(out.shape(), 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || grads_[i].size() == 0) continue;
    n.backward(*this, grads_[i]);
    ++visited_;
  }
}

Tensor Tape::grad(Var v) const {
  if (v.id < grads_.size() && grads_[v.id].size() == value(v).size() && value(v).size() != 0) return grads_[v.id];
  return Tensor(value(v).shape());
}

const Tensor* Tape::parameter_grad(const Parameter& p) const {
  auto it = parameter_nodes_.find(&p);
  if (it == parameter_nodes_.end()) return nullptr;
  if (it->second >= grads_.size() || grads_[it->second].size() == 0) return nullptr;
  return &grads_[it->second];
}

}  // namespace oodattack
