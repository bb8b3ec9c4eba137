#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "icl/taskgen/task.hpp"
#include "icl/trainer/trainer.hpp"

namespace icl::xcli {

/// A closed-form or tuned in-context estimator. Kinds and parameters:
///   zero
///   ols
///   ridge        lambda: number | "bayes" | "tuned"; sigma (bayes override)
///   lasso        lambda: number | "tuned"
///   one_step_gd  c: number | "calibrated"
///   smoother     kernel: {"kind": "linear|exponential|hilbert", ...}
///   psi_scalar   feature: {"map": "psi_L|psi_K", "kernel": ...}; least
///                squares a * psi(A)_{N,d+1} + b fitted per N
/// Tuned and fitted values use Tuning-domain tasks, chosen per context length.
struct EstimatorSpec {
  std::string kind;
  nlohmann::json params = nlohmann::json::object();
  // Tuning-domain tasks for "tuned", "calibrated" and psi_scalar fits.
  std::size_t tuning_tasks = 200;
  double grid_lo = 1e-4;
  double grid_hi = 1e2;
  int grid_points = 13;
};

// Throws FormatError with a field path.
EstimatorSpec estimator_from_json(const nlohmann::json& j, const std::string& path);
nlohmann::json to_json(const EstimatorSpec& e);
void validate_for_family(const EstimatorSpec& e, const tasks::TaskFamily& family, const std::string& path);

// The returned predictor caches per-N tuned values and may be shared across
// threads.
train::Predictor make_estimator(const EstimatorSpec& e, const tasks::TaskFamily& family, std::uint64_t tuning_seed);

// Labeled prefixes of `count` Tuning-domain tasks at context length n.
std::vector<tasks::LabeledPrompt> tuning_prompts(const tasks::TaskFamily& family, std::uint64_t seed,
                                                 std::size_t count, std::size_t n);

}  // namespace icl::xcli
