#pragma once

#include <functional>
#include <span>
#include <string>
#include <deque>
#include <unordered_map>
#include <vector>

#include "deskmvs/numerics/tensor.hpp"

namespace deskmvs {

// A learnable (or frozen) tensor together with its accumulated gradient.
// Frozen parameters never receive gradient: their grad stays identically zero.
struct Param {
  Param() = default;
  Param(std::string name, Tensor value, bool trainable = true);

  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad();
};

using ParamList = std::vector<Param*>;

void zero_grads(const ParamList& params);
std::int64_t count_parameters(const ParamList& params, bool trainable_only = true);

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// tape is alive.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const;
  int id() const noexcept { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(int axis) const { return value().dim(axis); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Every differentiable operation records its output value
// plus a hand-written backward transform; backward() replays them in reverse
// creation order and finally pushes leaf gradients into trainable Params.
class Tape {
 public:
  // Receives the gradient w.r.t. the recorded output (and the output value
  // itself) and accumulates into the inputs via accumulate / grad_buffer.
  using Backward = std::function<void(Tape&, const Tensor& grad_out, const Tensor& out)>;

  // With record_gradients=false values are still recorded but no backward
  // closures are kept (inference mode).
  explicit Tape(bool record_gradients = true) : record_gradients_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Binding the same Param twice yields the same Var.
  Var param(Param& p);

  // `op` is used in error messages. Throws NumericError if value is not finite.
  Var record(const char* op, Tensor value, std::span<const Var> inputs, Backward backward);
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  bool recording() const noexcept { return record_gradients_; }

  // Gradient buffer for v, zero-initialised on first access.
  Tensor& grad_buffer(Var v);
  void accumulate(Var v, const Tensor& g);
  // Null until some gradient reached v.
  const Tensor* grad(Var v) const;

  // Seeds d(loss)/d(loss)=1 and runs the reverse sweep. Param grads are
  // accumulated (not overwritten) so several tapes can contribute.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
    Param* param = nullptr;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  std::deque<Node> nodes_;  // deque: values stay addressable while recording
  std::unordered_map<const Param*, int> bound_params_;
  bool record_gradients_;
};

}  // namespace deskmvs
