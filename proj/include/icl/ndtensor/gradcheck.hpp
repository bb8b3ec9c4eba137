#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "icl/ndtensor/tape.hpp"

namespace icl::nd {

// Builds a scalar loss on `tape` from leaves holding the given inputs.
using LossBuilder = std::function<Var(Tape& tape, const std::vector<Var>& leaves)>;

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  bool passed = false;
};

// Compares reverse-mode gradients with central differences, step
// h = 1e-6 * max(1, |x|), error |ad - fd| / max(1, |fd|).
GradCheckResult check_gradient(const std::string& name, const LossBuilder& loss,
                               const std::vector<Tensor>& inputs, double tolerance = 1e-5);

// Uniform entries in [lo, hi] from a deterministic stream.
Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0);

}  // namespace icl::nd
