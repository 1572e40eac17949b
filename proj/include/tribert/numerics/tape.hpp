#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "tribert/numerics/tensor.hpp"

namespace tribert {

/// A learned tensor plus its accumulated gradient.
struct Parameter {
  Tensor value;
  Tensor grad;
  void zero_grad() { grad = Tensor(value.shape); }
};

/// Name-ordered parameter collection. std::map keeps both iteration order and
/// element addresses stable, so Parameter* handles stay valid across inserts.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  void erase(const std::string& name) { params_.erase(name); }
  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::int32_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t dim(std::size_t axis) const { return value().shape.at(axis); }
  std::size_t size() const { return value().size(); }
  Tape& tape() const { return *tape_; }
  std::int32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::int32_t id_ = -1;
};

/// Dynamic reverse-mode tape. Ops append nodes in execution order, so node ids
/// are already a topological order. A tape supports exactly one backward pass.
class Tape {
 public:
  /// Called with the gradient of the node's output; pushes parent gradients
  /// through Tape::accumulate.
  using BackwardFn = std::function<void(const Tensor& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad);
  Var param(Parameter& p);

  /// Records an op result. `backward` is dropped when no parent needs grad.
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward);

  const Tensor& value(std::int32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::int32_t id) const { return nodes_[id].requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }

  /// Adds `g` into the gradient buffer of node `id` (no-op if it needs none).
  void accumulate(std::int32_t id, const Tensor& g);
  /// Direct access to a node's gradient buffer, allocating zeros on demand.
  /// Returns nullptr when the node does not require grad.
  Tensor* grad_buffer(std::int32_t id);

  /// Gradient of a leaf after backward(); zeros if unreachable.
  Tensor grad(Var v) const;

  void backward(Var loss);
  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  bool grad_enabled_;
  bool consumed_ = false;
  std::deque<Node> nodes_;
  std::unordered_map<Parameter*, std::int32_t> param_ids_;
};

}  // namespace tribert
