#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "icl/taskgen/rng.hpp"

namespace icl::tasks {

// y = beta^T x + eps, beta ~ N(0, I/d), eps ~ N(0, sigma^2).
struct LinearFixedNoise {
  int d = 1;
  double sigma = 0.0;
};

// As LinearFixedNoise, but each task uses sigma1 or sigma2 with probability 1/2.
struct LinearMixedNoise {
  int d = 1;
  double sigma1 = 0.0;
  double sigma2 = 0.0;
};

// beta ~ N(0, I) with all but s uniformly chosen coordinates zeroed.
struct SparseLinear {
  int d = 1;
  int s = 0;
};

// y = sum_j alpha_j relu(w_j^T x) with a random teacher of width r.
struct TwoLayerReLU {
  int d = 1;
  int r = 1;
};

// Complete binary tree of the given depth splitting on x_coord > 0.
struct DecisionTree {
  int d = 1;
  int depth = 1;
};

using TaskFamily = std::variant<LinearFixedNoise, LinearMixedNoise, SparseLinear, TwoLayerReLU, DecisionTree>;

int input_dim(const TaskFamily& family);
std::string family_kind(const TaskFamily& family);
// Throws ContractError when an invariant (d >= 1, 0 <= s <= d, ...) fails.
void validate(const TaskFamily& family);

nlohmann::json to_json(const TaskFamily& family);
// Throws FormatError naming the offending field, e.g. "family.sigma".
TaskFamily family_from_json(const nlohmann::json& j, const std::string& path = "family");

struct LinearParams {
  std::vector<double> beta;
};

struct ReluTeacherParams {
  int r = 0;
  std::vector<double> hidden;  // r x d, row j is w_j
  std::vector<double> alpha;   // r
};

struct TreeParams {
  int depth = 0;
  std::vector<int> split_coord;     // 2^depth - 1 internal nodes, heap order
  std::vector<double> leaf_values;  // 2^depth leaves, left to right
};

/// One sampled task instance.
struct TaskParams {
  TaskFamily family;
  std::uint64_t master_seed = 0;
  std::uint64_t index = 0;
  double noise_sigma = 0.0;
  std::variant<LinearParams, ReluTeacherParams, TreeParams> body;

  int dim() const { return input_dim(family); }
  // Noiseless label f(x).
  double target(std::span<const double> x) const;
};

// Pure function of (family, rng seed/domain, t).
TaskParams sample_task(const TaskFamily& family, const Rng& rng, std::uint64_t t);

}  // namespace icl::tasks
