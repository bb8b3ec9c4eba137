#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "icl/models/models.hpp"
#include "icl/taskgen/task.hpp"
#include "icl/trainer/trainer.hpp"
#include "icl/xcli/estimators.hpp"

namespace icl::xcli {

/// One row source: a trainable model or a fixed estimator. `train` is the
/// block's training config with the learner's overrides applied.
struct LearnerConfig {
  std::string id;
  std::optional<models::ModelSpec> model;
  std::optional<EstimatorSpec> estimator;
  train::TrainConfig train;
};

struct SweepConfig {
  enum class Kind { TaskScaling, ContextScaling } kind = Kind::TaskScaling;
  std::vector<std::size_t> ts;
  std::vector<std::size_t> ns;
  // Learner ids; empty means every learner of the block.
  std::vector<std::string> learners;
};

struct BlockConfig {
  std::string label;
  tasks::TaskFamily family;
  train::TrainConfig train;
  std::size_t eval_tasks = 1000;
  std::uint64_t eval_seed = 0;
  // Keep only evaluation tasks with this noise level.
  std::optional<double> noise_filter;
  std::vector<LearnerConfig> learners;
  std::vector<SweepConfig> sweeps;
};

struct ExperimentConfig {
  std::string name;
  std::string description;
  std::vector<std::uint64_t> seeds{0};
  std::size_t threads = 1;
  bool checkpoints = true;
  std::vector<BlockConfig> blocks;
};

// Parses and validates; every error is a FormatError naming the field path.
ExperimentConfig config_from_json(const nlohmann::json& j);
// Canonical form: re-parsing it yields the same config.
nlohmann::json to_json(const ExperimentConfig& c);

// Training cells implied by the sweeps: for each trainable learner and T, the
// context lengths to evaluate.
struct CellPlan {
  std::size_t block = 0;
  std::size_t learner = 0;
  std::size_t tasks = 0;
  std::vector<std::size_t> ns;
};
std::vector<CellPlan> plan_cells(const BlockConfig& b, std::size_t block_index);

}  // namespace icl::xcli
