#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "icl/models/models.hpp"
#include "icl/taskgen/prompt.hpp"
#include "icl/taskgen/task.hpp"

namespace icl::train {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

// Bias-corrected Adam on every trainable entry; `grads` is index-aligned with
// the store. Frozen entries are left untouched.
void adam_step(models::ParamStore& params, const std::vector<nd::Tensor>& grads, AdamState& state,
               const AdamOptions& opts);

struct TrainConfig {
  // Trained context lengths, ascending.
  std::vector<std::size_t> context_lengths{10};
  // T: distinct pre-training tasks, revisited over epochs.
  std::size_t num_tasks = 1000;
  // Draw a fresh task for every batch slot instead of a fixed pool.
  bool fresh_tasks = false;
  std::size_t batch_size = 64;
  std::size_t steps = 1000;
  AdamOptions adam;
  std::uint64_t master_seed = 0;
  // Probe-loss sanity check: training must end below its initial loss.
  bool require_improvement = true;

  std::size_t max_context() const { return context_lengths.back(); }
};

// Throws FormatError with a "train.<field>" path.
void validate(const TrainConfig& c);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train");

// Mean over prompts and configured context lengths of (M(A^i) - y_{i+1})^2,
// A^i = make_prefix(prompt, i). Prompts carry every label.
nd::Var icl_loss(nd::Tape& tape, const models::Model& model, const models::Bound& params,
                 std::span<const tasks::PromptMatrix> prompts, std::span<const std::size_t> context_lengths);
double icl_loss_value(const models::Model& model, std::span<const tasks::PromptMatrix> prompts,
                      std::span<const std::size_t> context_lengths);

// The t-th training prompt (max_context + 1 rows) from the Train domain.
tasks::PromptMatrix training_prompt(const tasks::TaskFamily& family, std::uint64_t master_seed, std::uint64_t t,
                                    std::size_t rows);

struct TrainResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> batch_losses;
  std::size_t steps = 0;
};

// Optional per-step hook (step index, batch loss).
using StepHook = std::function<void(std::size_t, double)>;

// Trains `model` in place. Throws TrainingError if the probe loss did not
// decrease and require_improvement is set.
TrainResult train(models::Model& model, const tasks::TaskFamily& family, const TrainConfig& config,
                  const StepHook& hook = {});

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Batch predictor over prompts with zeroed query labels.
using Predictor = std::function<std::vector<double>(std::span<const tasks::PromptMatrix>)>;
Predictor predictor_of(const models::Model& model);

struct EvalRow {
  std::string family;
  std::string model;
  std::size_t tasks = 0;  // T; 0 for estimators without training
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double normalized_mse = 0.0;
  double raw_mse = 0.0;
  std::size_t num_eval_tasks = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  static const char* csv_header();
  void write_csv(std::ostream& out, bool header = true) const;
  void append(const EvalReport& other);
};
std::string csv_line(const EvalRow& r);
// Shortest round-trip decimal form.
std::string format_double(double v);

// Mean of y^2 at the query over 10^5 fresh labels from the Normalizer domain,
// cached per (family, N).
double normalizer(const tasks::TaskFamily& family, std::size_t n);

struct EvalOptions {
  std::size_t num_eval_tasks = 1000;
  std::uint64_t seed = 0;
  // Optional filter on sampled tasks (e.g. one noise level of a mixture).
  std::function<bool(const tasks::TaskParams&)> task_filter;
};

// The t-th evaluation prompt; shared across every N so curves are paired.
tasks::PromptMatrix eval_prompt(const tasks::TaskFamily& family, std::uint64_t seed, std::uint64_t t,
                                std::size_t rows);

// Normalized MSE at each N over fresh Eval-domain tasks.
EvalReport evaluate(const Predictor& predict, const std::string& model_id, const tasks::TaskFamily& family,
                    std::span<const std::size_t> ns, const EvalOptions& opts, std::size_t trained_tasks = 0);

// Throws ContractError unless the two generators can never share a stream.
void assert_disjoint(const tasks::Rng& train, const tasks::Rng& eval);

// A trainable model spec or a fixed estimator.
struct Learner {
  std::string id;
  std::optional<models::ModelSpec> model;
  // Estimator factory; receives the family so it can read sigma, d.
  std::function<Predictor(const tasks::TaskFamily&)> estimator;
};

// Called after each trained cell with the model and its config.
using CellHook = std::function<void(const models::Model&, const TrainConfig&, const TrainResult&)>;

// One model per T in `ts` (ascending), evaluated at the single length `n`.
EvalReport task_scaling_sweep(const tasks::TaskFamily& family, const Learner& learner, const TrainConfig& base,
                              std::span<const std::size_t> ts, std::size_t n, const EvalOptions& eval,
                              const CellHook& hook = {});

// One model trained on `base.num_tasks` tasks, evaluated at every N in `ns`.
EvalReport context_scaling_sweep(const tasks::TaskFamily& family, const Learner& learner, const TrainConfig& base,
                                 std::span<const std::size_t> ns, const EvalOptions& eval,
                                 const CellHook& hook = {});

}  // namespace icl::train
