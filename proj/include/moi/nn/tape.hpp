#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <unordered_map>
#include <utility>
#include <vector>

#include "moi/core/error.hpp"
#include "moi/nn/params.hpp"

namespace moi::nn {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
// tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool needs_grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode automatic differentiation over row-major matrices. Every op
// appends a node; backward() walks the nodes in reverse creation order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const ParameterSet* params, Gradients* sink) : params_(params), sink_(sink) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Disables recording of backward closures (inference mode).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

  // Leaf whose gradient is readable with grad() after backward().
  Var variable(Matrix value) { return push(std::move(value), grad_enabled_, nullptr); }

  // Leaf bound to a parameter. Gradients land in the sink passed at
  // construction. Repeated calls with the same id return the same node.
  Var param(ParamId id) {
    if (params_ == nullptr) throw Error("tape has no parameter set");
    auto it = param_nodes_.find(id);
    if (it != param_nodes_.end()) return Var(this, it->second);
    const bool track = grad_enabled_ && sink_ != nullptr;
    Var v = push(params_->value(id), track, nullptr);
    if (track) {
      nodes_[static_cast<std::size_t>(v.id())].param = static_cast<long>(id);
    }
    param_nodes_.emplace(id, v.id());
    return v;
  }

  Var push(Matrix value, bool needs_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = needs_grad ? std::move(fn) : BackwardFn{};
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  // Gradient accumulator of a node, zero-initialised on first access.
  Matrix& grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) {
      n.grad.setZero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  Matrix grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id())];
    if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var root) {
    const Matrix& rv = value(root.id());
    if (rv.rows() != 1 || rv.cols() != 1) throw InvalidInput("backward() needs a scalar root");
    if (!needs_grad(root.id())) return;
    grad_buffer(root.id())(0, 0) += 1.0;
    for (int id = root.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || !n.has_grad) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param >= 0) (*sink_)[static_cast<ParamId>(n.param)] += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    long param = -1;
    bool needs_grad = false;
    bool has_grad = false;
  };

  const ParameterSet* params_ = nullptr;
  Gradients* sink_ = nullptr;
  bool grad_enabled_ = true;
  std::vector<Node> nodes_;
  std::unordered_map<ParamId, int> param_nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline bool Var::needs_grad() const { return tape_->needs_grad(id_); }

}  // namespace moi::nn
