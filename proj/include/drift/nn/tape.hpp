#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "drift/nn/params.hpp"
#include "drift/nn/tensor.hpp"

namespace drift::nn {

// Handle to a node on a Tape.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::uint32_t>::max(); }
};

enum class OpKind : std::uint8_t {
  Constant,
  Param,
  Conv1d,
  BatchNorm,
  Dense,
  Relu,
  Add,
  GlobalAvgPool,
  MaxPool,
  SoftmaxCrossEntropy,
  Grl,
  Slice,
  Concat,
  Sum,
  Scale,
  WeightedSum,
  CenterLoss,
  SeparationLoss,
};

std::string_view op_name(OpKind kind) noexcept;

enum class Mode { Train, Eval };

// Records executed operations in order. Nodes are appended after their
// inputs, so reverse insertion order is a valid topological order for the
// backward sweep. A tape belongs to one thread.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Var)>;

  struct Node {
    OpKind kind = OpKind::Constant;
    Tensor<T> value;
    const Tensor<T>* external = nullptr;  // parameter leaves alias the store
    Tensor<T> grad;
    std::vector<Var> inputs;
    BackwardFn backward;
    std::int64_t param = -1;
    bool requires_grad = false;
  };

  Tape() {
#ifndef NDEBUG
    check_finite_ = true;
#endif
  }

  Var constant(Tensor<T> value) {
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(value);
    check(n.kind, n.value);
    return push(std::move(n));
  }

  // The store must outlive the tape; its values are read, not copied.
  Var parameter(const ParamStore<T>& store, std::size_t index) {
    require(store_ == nullptr || store_ == &store, ErrorKind::Usage,
            "a tape can only reference one parameter store");
    store_ = &store;
    Node n;
    n.kind = OpKind::Param;
    n.external = &store[index].value;
    n.param = static_cast<std::int64_t>(index);
    n.requires_grad = store[index].trainable && !no_grad_;
    return push(std::move(n));
  }

  Var record(OpKind kind, Tensor<T> value, std::vector<Var> inputs, BackwardFn fn) {
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    for (auto in : inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(fn);
    check(kind, n.value);
    if (kind == OpKind::Grl) has_grl_ = true;
    return push(std::move(n));
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = node(v);
    return n.external ? *n.external : n.value;
  }

  const Tensor<T>& grad(Var v) const { return node(v).grad; }

  // Gradient buffer of v, zero-initialized on first use.
  Tensor<T>& grad_accumulator(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad = Tensor<T>(value(v).shape());
    return n.grad;
  }

  bool requires_grad(Var v) const { return node(v).requires_grad; }
  OpKind kind(Var v) const { return node(v).kind; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool contains_grl() const noexcept { return has_grl_; }

  // Verification mode: gradient reversal nodes pass gradients through
  // unchanged so the tape computes the true derivative of the forward map.
  void set_grl_transparent(bool on) noexcept { grl_transparent_ = on; }
  bool grl_transparent() const noexcept { return grl_transparent_; }

  void set_check_finite(bool on) noexcept { check_finite_ = on; }

  // Inference only: parameters are recorded as constants, so no backward
  // closures or caches are kept.
  void set_no_grad(bool on) noexcept { no_grad_ = on; }

  Gradients<T> backward(Var loss) {
    require(loss.valid() && loss.id < nodes_.size(), ErrorKind::Usage, "backward: invalid root");
    require(value(loss).size() == 1, ErrorKind::Usage,
            "backward: root must be a scalar, got shape " + shape_string(value(loss).shape()));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_accumulator(loss).fill(T{1});
    for (std::int64_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, Var{static_cast<std::uint32_t>(i)});
    }
    Gradients<T> out;
    if (store_ == nullptr) return out;
    out.by_param.resize(store_->size());
    for (std::size_t p = 0; p < store_->size(); ++p) {
      if ((*store_)[p].trainable) out.by_param[p] = Tensor<T>((*store_)[p].value.shape());
    }
    for (const auto& n : nodes_) {
      if (n.kind != OpKind::Param || n.grad.empty()) continue;
      auto& dst = out.by_param[static_cast<std::size_t>(n.param)];
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
    }
    return out;
  }

 private:
  Node& node(Var v) {
    require(v.valid() && v.id < nodes_.size(), ErrorKind::Usage, "invalid tape variable");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    require(v.valid() && v.id < nodes_.size(), ErrorKind::Usage, "invalid tape variable");
    return nodes_[v.id];
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void check(OpKind kind, const Tensor<T>& v) const {
    if (check_finite_ && !v.all_finite()) {
      fail(ErrorKind::Numeric, "non-finite value produced by " + std::string(op_name(kind)));
    }
  }

  std::vector<Node> nodes_;
  const ParamStore<T>* store_ = nullptr;
  bool grl_transparent_ = false;
  bool has_grl_ = false;
  bool check_finite_ = false;
  bool no_grad_ = false;
};

}  // namespace drift::nn
