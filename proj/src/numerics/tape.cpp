#include "tribert/numerics/tape.hpp"

#include <stdexcept>

namespace tribert {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("Var: unbound handle");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) { return input(std::move(value), false); }

Var Tape::input(Tensor value, bool requires_grad) {
  if (consumed_) throw std::logic_error("Tape: recording on a consumed tape");
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return {this, it->second};
  Var v = input(p.value, true);
  nodes_[v.id()].param = &p;
  param_ids_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn backward) {
  if (consumed_) throw std::logic_error("Tape: recording on a consumed tape");
#ifndef NDEBUG
  if (!value.all_finite()) throw std::runtime_error("Tape: non-finite op output");
#endif
  bool needs = false;
  if (grad_enabled_) {
    for (const Var& p : parents) {
      if (p.valid() && &p.tape() != this) throw std::logic_error("Tape: mixing tapes");
      needs = needs || (p.valid() && nodes_[p.id()].requires_grad);
    }
  }
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tensor* Tape::grad_buffer(std::int32_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape);
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::accumulate(std::int32_t id, const Tensor& g) {
  Tensor* buf = grad_buffer(id);
  if (!buf) return;
  if (buf->size() != g.size())
    throw std::logic_error("Tape: gradient shape mismatch " + shape_str(g.shape) + " vs " +
                           shape_str(buf->shape));
  for (std::size_t i = 0; i < g.size(); ++i) buf->data[i] += g.data[i];
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape);
}

void Tape::backward(Var loss) {
  if (consumed_) throw std::logic_error("Tape: backward called twice");
  if (!loss.valid() || &loss.tape() != this) throw std::invalid_argument("Tape: foreign loss");
  if (nodes_[loss.id()].value.size() != 1)
    throw std::invalid_argument("Tape: loss must be scalar, got " +
                                shape_str(nodes_[loss.id()].value.shape));
  consumed_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())->data[0] = 1.0;
  for (std::int32_t id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.backward) {
      n.backward(n.grad);
      n.backward = nullptr;
    }
    if (n.param) {
      auto& pg = n.param->grad;
      if (pg.size() != n.grad.size()) pg = Tensor(n.value.shape);
      for (std::size_t i = 0; i < n.grad.size(); ++i) pg.data[i] += n.grad.data[i];
    }
  }
}

}  // namespace tribert
