#include "icl/ndtensor/tape.hpp"

#include "icl/errors.hpp"

namespace icl::nd {

const Tensor& Var::value() const { return tape_->value(*this); }

bool Var::requires_grad() const { return tape_->requires_grad(*this); }

std::span<double> GradSink::grad(const Var& input) {
  if (!tape_.requires_grad(input)) return {};
  auto& g = grads_[input.id()];
  if (g.empty()) g.assign(tape_.value(input).size(), 0.0);
  return g;
}

Tensor Gradients::operator[](const Var& leaf) const {
  const std::size_t id = leaf.id();
  if (id < present_.size() && present_[id]) return grads_[id];
  return Tensor::zeros(leaf.shape());
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{requires_grad ? "leaf" : "constant", std::move(value), {}, nullptr, requires_grad});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    check_owned(in);
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::string(op), std::move(value), std::move(inputs),
                        needs ? std::move(backward) : BackwardFn{}, needs});
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(const Var& v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw ContractError("variable does not belong to this tape");
  }
}

const Tensor& Tape::value(const Var& v) const {
  check_owned(v);
  return nodes_[v.id()].value;
}

bool Tape::requires_grad(const Var& v) const {
  check_owned(v);
  return nodes_[v.id()].requires_grad;
}

std::string_view Tape::op_name(const Var& v) const {
  check_owned(v);
  return nodes_[v.id()].op;
}

Gradients Tape::backward(const Var& loss) const {
  check_owned(loss);
  const Node& root = nodes_[loss.id()];
  if (root.value.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + to_string(root.value.shape()));
  }

  std::vector<std::vector<double>> grads(loss.id() + 1);
  GradSink sink(*this, grads);
  if (root.requires_grad) grads[loss.id()].assign(1, 1.0);

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.backward || grads[id].empty()) continue;
    node.backward(grads[id], sink);
  }

  Gradients out;
  out.grads_.resize(grads.size());
  out.present_.assign(grads.size(), false);
  for (std::size_t id = 0; id < grads.size(); ++id) {
    if (nodes_[id].inputs.empty() && nodes_[id].requires_grad && !grads[id].empty()) {
      out.grads_[id] = Tensor(nodes_[id].value.shape(), std::move(grads[id]));
      out.present_[id] = true;
    }
  }
  return out;
}

}  // namespace icl::nd
