#include "icl/ndtensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace icl::nd {
namespace {

double evaluate(const LossBuilder& loss, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  return loss(tape, leaves).value().item();
}

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

GradCheckResult check_gradient(const std::string& name, const LossBuilder& loss,
                               const std::vector<Tensor>& inputs, double tolerance) {
  GradCheckResult result{name};
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  const Var out = loss(tape, leaves);
  const Gradients grads = tape.backward(out);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor ad = grads[leaves[k]];
    for (std::size_t e = 0; e < inputs[k].size(); ++e) {
      const double x = inputs[k][e];
      const double h = 1e-6 * std::max(1.0, std::abs(x));
      auto shifted = [&](double delta) {
        std::vector<Tensor> moved = inputs;
        std::vector<double> v = inputs[k].to_vector();
        v[e] = x + delta;
        moved[k] = Tensor(inputs[k].shape(), std::move(v));
        return evaluate(loss, moved);
      };
      const double fd = (shifted(h) - shifted(-h)) / (2.0 * h);
      const double err = std::abs(ad[e] - fd) / std::max(1.0, std::abs(fd));
      result.max_rel_error = std::max(result.max_rel_error, std::isfinite(err) ? err : INFINITY);
      ++result.entries_checked;
    }
  }
  result.passed = result.max_rel_error < tolerance;
  return result;
}

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo, double hi) {
  const std::size_t n = shape_size(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = static_cast<double>(mix(seed * 0x9e3779b97f4a7c15ULL + i + 1) >> 11) * 0x1.0p-53;
    v[i] = lo + (hi - lo) * u;
  }
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace icl::nd
