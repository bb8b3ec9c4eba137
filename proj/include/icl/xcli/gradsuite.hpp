#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace icl::xcli {

struct GradSuiteEntry {
  std::string name;
  std::size_t points = 0;
  // Worst relative error over all points.
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradSuiteReport {
  std::vector<GradSuiteEntry> entries;
  bool passed() const;
};

// Names in report order: every differentiable op once, then the models and
// the training loss.
std::vector<std::string> grad_suite_names();

// Finite-difference checks at `points` random inputs per entry. `corrupt`
// names an entry whose loss gets an extra op with a wrong backward rule, as a
// negative control.
GradSuiteReport run_grad_suite(std::size_t points = 10, double tolerance = 1e-5,
                               const std::optional<std::string>& corrupt = std::nullopt);

}  // namespace icl::xcli
