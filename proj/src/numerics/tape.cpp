#include "deskmvs/numerics/tape.hpp"

namespace deskmvs {

Param::Param(std::string n, Tensor v, bool train)
    : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)), trainable(train) {}

void Param::zero_grad() {
  if (!grad.same_shape(value)) grad = Tensor::zeros_like(value);
  grad.fill(0.0);
}

void zero_grads(const ParamList& params) {
  for (auto* p : params) p->zero_grad();
}

std::int64_t count_parameters(const ParamList& params, bool trainable_only) {
  std::int64_t n = 0;
  for (const auto* p : params) {
    if (!trainable_only || p->trainable) n += p->value.numel();
  }
  return n;
}

Tape& Var::tape() const {
  if (!tape_) throw Error("use of an unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(*this); }

bool Var::requires_grad() const { return tape().requires_grad(*this); }

Tape::Node& Tape::node(Var v) {
  if (v.tape_ != this || v.id_ < 0 || v.id_ >= static_cast<int>(nodes_.size())) {
    throw Error("Var does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id_)];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape_ != this || v.id_ < 0 || v.id_ >= static_cast<int>(nodes_.size())) {
    throw Error("Var does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id_)];
}

Var Tape::constant(Tensor value) {
  require_finite(value, "constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Param& p) {
  if (auto it = bound_params_.find(&p); it != bound_params_.end()) return Var(this, it->second);
  require_finite(p.value, "param " + p.name);
  Node n;
  n.value = p.value;
  n.requires_grad = record_gradients_ && p.trainable;
  n.param = &p;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  bound_params_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, Backward backward) {
  require_finite(value, op);
  Node n;
  n.value = std::move(value);
  if (record_gradients_) {
    for (const auto& in : inputs) {
      if (node(in).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor& Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (g.numel() != n.value.numel()) {
    throw ShapeError("gradient of shape " + shape_string(g.shape()) + " for value of shape " +
                     shape_string(n.value.shape()));
  }
  if (!n.has_grad) {
    n.grad = g.reshape(n.value.shape());
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

const Tensor* Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.has_grad ? &n.grad : nullptr;
}

void Tape::backward(Var loss) {
  Node& root = node(loss);
  if (root.value.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_string(root.value.shape()));
  }
  if (!record_gradients_) throw Error("backward() on a tape created without gradient recording");
  if (!root.requires_grad) return;
  grad_buffer(loss).fill(1.0);

  for (int id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || !n.has_grad) continue;
    require_finite(n.grad, "backward pass");
    if (n.backward) n.backward(*this, n.grad, n.value);
    if (n.param != nullptr && n.param->trainable) {
      if (!n.param->grad.same_shape(n.param->value)) n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

}  // namespace deskmvs
