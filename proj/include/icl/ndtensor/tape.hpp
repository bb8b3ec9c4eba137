#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icl/ndtensor/tensor.hpp"

namespace icl::nd {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the gradient contributions produced by one node's backward rule.
class GradSink {
 public:
  // Zero-initialized on first use; empty span when `input` needs no gradient.
  std::span<double> grad(const Var& input);

 private:
  friend class Tape;
  GradSink(const Tape& tape, std::vector<std::vector<double>>& grads) : tape_(tape), grads_(grads) {}

  const Tape& tape_;
  std::vector<std::vector<double>>& grads_;
};

// Called with the gradient of the loss w.r.t. the node's output.
using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

/// Gradients of a scalar loss, keyed by node.
class Gradients {
 public:
  // Gradient w.r.t. `leaf`; a zero tensor when the loss does not depend on it.
  Tensor operator[](const Var& leaf) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
};

/// Append-only record of differentiable operations. Node ids are assigned in
/// creation order, which is a topological order because a node can only
/// reference existing nodes. Single-owner: build and differentiate on one
/// thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records an operation; the node requires grad iff any input does.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(const Var& v) const;
  bool requires_grad(const Var& v) const;
  std::string_view op_name(const Var& v) const;
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar (single-element) loss.
  Gradients backward(const Var& loss) const;

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(const Var& v) const;

  std::vector<Node> nodes_;
};

}  // namespace icl::nd
