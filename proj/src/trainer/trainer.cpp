#include "icl/trainer/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>

#include "icl/errors.hpp"
#include "icl/jsonutil.hpp"
#include "icl/ndtensor/ops.hpp"

namespace icl::train {

using models::Bound;
using models::Model;
using nd::Tape;
using nd::Tensor;
using nd::Var;
using tasks::PromptMatrix;

// ---------------------------------------------------------------- Adam

void adam_step(models::ParamStore& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamOptions& opts) {
  if (grads.size() != params.size()) throw ContractError("adam_step: one gradient per parameter required");
  if (state.m.empty()) {
    for (const auto& e : params.entries()) {
      state.m.emplace_back(e.value.size(), 0.0);
      state.v.emplace_back(e.value.size(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opts.beta1, t);
  const double c2 = 1.0 - std::pow(opts.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params[i];
    if (!e.trainable) continue;
    if (grads[i].size() != e.value.size()) throw DimensionError("adam_step: gradient shape mismatch for " + e.name);
    auto& m = state.m[i];
    auto& v = state.v[i];
    std::vector<double> w = e.value.to_vector();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = grads[i][k];
      m[k] = opts.beta1 * m[k] + (1.0 - opts.beta1) * g;
      v[k] = opts.beta2 * v[k] + (1.0 - opts.beta2) * g * g;
      w[k] -= opts.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + opts.eps);
    }
    params.set(i, Tensor(e.value.shape(), std::move(w)));
  }
}

// ---------------------------------------------------------------- config

void validate(const TrainConfig& c) {
  if (c.context_lengths.empty()) throw FormatError("train.context_lengths: must not be empty");
  for (std::size_t i = 0; i < c.context_lengths.size(); ++i) {
    if (c.context_lengths[i] < 1) throw FormatError("train.context_lengths: entries must be >= 1");
    if (i && c.context_lengths[i] <= c.context_lengths[i - 1]) {
      throw FormatError("train.context_lengths: must be strictly ascending");
    }
  }
  if (c.num_tasks < 1) throw FormatError("train.tasks: must be >= 1");
  if (c.batch_size < 1) throw FormatError("train.batch_size: must be >= 1");
  if (!(c.adam.lr > 0.0)) throw FormatError("train.lr: must be > 0");
  if (!(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0)) throw FormatError("train.beta1: must be in [0, 1)");
  if (!(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0)) throw FormatError("train.beta2: must be in [0, 1)");
  if (!(c.adam.eps > 0.0)) throw FormatError("train.eps: must be > 0");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"context_lengths", c.context_lengths},
          {"tasks", c.num_tasks},
          {"fresh_tasks", c.fresh_tasks},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"lr", c.adam.lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"seed", c.master_seed},
          {"require_improvement", c.require_improvement}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path) {
  using namespace jsonutil;
  if (!j.is_object()) throw FormatError(path + ": expected object");
  TrainConfig c;
  const auto& lengths = require_field(j, path, "context_lengths");
  if (!lengths.is_array()) throw FormatError(path + ".context_lengths: expected array of integers");
  c.context_lengths.clear();
  for (const auto& v : lengths) {
    if (!v.is_number_integer() || v.get<long long>() < 1) {
      throw FormatError(path + ".context_lengths: expected array of positive integers");
    }
    c.context_lengths.push_back(v.get<std::size_t>());
  }
  c.num_tasks = get_size(j, path, "tasks");
  c.fresh_tasks = optional(j, "fresh_tasks", false, [&] { return get_bool(j, path, "fresh_tasks"); });
  c.batch_size = optional(j, "batch_size", c.batch_size, [&] { return get_size(j, path, "batch_size"); });
  c.steps = optional(j, "steps", c.steps, [&] { return get_size(j, path, "steps"); });
  c.adam.lr = optional(j, "lr", c.adam.lr, [&] { return get_number(j, path, "lr"); });
  c.adam.beta1 = optional(j, "beta1", c.adam.beta1, [&] { return get_number(j, path, "beta1"); });
  c.adam.beta2 = optional(j, "beta2", c.adam.beta2, [&] { return get_number(j, path, "beta2"); });
  c.adam.eps = optional(j, "eps", c.adam.eps, [&] { return get_number(j, path, "eps"); });
  c.master_seed = optional<std::uint64_t>(j, "seed", 0, [&] { return get_size(j, path, "seed"); });
  c.require_improvement =
      optional(j, "require_improvement", true, [&] { return get_bool(j, path, "require_improvement"); });
  try {
    validate(c);
  } catch (const FormatError& e) {
    std::string msg = e.what();
    if (path != "train" && msg.rfind("train.", 0) == 0) msg = path + msg.substr(5);
    throw FormatError(msg);
  }
  return c;
}

// ---------------------------------------------------------------- loss

namespace {

struct PrefixBatch {
  std::vector<PromptMatrix> prompts;
  std::vector<double> targets;
};

// Prefixes ordered by length so each length forms one forward group.
PrefixBatch build_prefixes(std::span<const PromptMatrix> prompts, std::span<const std::size_t> lengths) {
  PrefixBatch b;
  b.prompts.reserve(prompts.size() * lengths.size());
  for (std::size_t n : lengths) {
    for (const auto& a : prompts) {
      if (n + 1 > a.rows()) {
        throw ContractError("icl_loss: context length " + std::to_string(n) + " exceeds prompt with " +
                            std::to_string(a.rows() - 1) + " examples");
      }
      auto lp = tasks::make_labeled_prefix(a, n);
      b.prompts.push_back(std::move(lp.prompt));
      b.targets.push_back(lp.target);
    }
  }
  return b;
}

}  // namespace

Var icl_loss(Tape& tape, const Model& model, const Bound& params, std::span<const PromptMatrix> prompts,
             std::span<const std::size_t> context_lengths) {
  if (prompts.empty() || context_lengths.empty()) throw ContractError("icl_loss: empty batch");
  auto b = build_prefixes(prompts, context_lengths);
  const Var pred = model.forward(tape, params, b.prompts);
  const std::size_t m = b.targets.size();
  return nd::squared_error(pred, Tensor({m}, std::move(b.targets)));
}

double icl_loss_value(const Model& model, std::span<const PromptMatrix> prompts,
                      std::span<const std::size_t> context_lengths) {
  auto b = build_prefixes(prompts, context_lengths);
  const auto pred = model.predict(std::span<const PromptMatrix>(b.prompts));
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - b.targets[i]) * (pred[i] - b.targets[i]);
  return s / static_cast<double>(pred.size());
}

PromptMatrix training_prompt(const tasks::TaskFamily& family, std::uint64_t master_seed, std::uint64_t t,
                             std::size_t rows) {
  const tasks::Rng rng(master_seed, tasks::Domain::Train);
  return tasks::sample_prompt(tasks::sample_task(family, rng, t), rng, rows);
}

// ---------------------------------------------------------------- training

namespace {

// Task index at position `pos` of the epoch-shuffled pool sequence.
class TaskOrder {
 public:
  TaskOrder(std::uint64_t seed, std::size_t pool) : rng_(seed, tasks::Domain::Batches), pool_(pool) {}

  std::uint64_t at(std::uint64_t pos) {
    const std::uint64_t epoch = pos / pool_;
    if (epoch != epoch_ || perm_.empty()) {
      perm_.resize(pool_);
      std::iota(perm_.begin(), perm_.end(), std::uint64_t{0});
      auto s = rng_.stream(tasks::Purpose::Order, epoch);
      for (std::size_t i = pool_; i > 1; --i) std::swap(perm_[i - 1], perm_[s.below(i)]);
      epoch_ = epoch;
    }
    return perm_[pos % pool_];
  }

 private:
  tasks::Rng rng_;
  std::size_t pool_;
  std::uint64_t epoch_ = 0;
  std::vector<std::uint64_t> perm_;
};

constexpr std::size_t kProbeTasks = 256;

}  // namespace

TrainResult train(Model& model, const tasks::TaskFamily& family, const TrainConfig& config, const StepHook& hook) {
  validate(config);
  if (models::model_dim(model.spec()) != tasks::input_dim(family)) {
    throw ContractError("train: model d does not match the task family");
  }
  const std::size_t rows = config.max_context() + 1;
  const std::span<const std::size_t> lengths(config.context_lengths);
  auto prompt = [&](std::uint64_t t) { return training_prompt(family, config.master_seed, t, rows); };

  std::vector<PromptMatrix> probe;
  for (std::size_t t = 0; t < std::min(config.num_tasks, kProbeTasks); ++t) probe.push_back(prompt(t));

  TrainResult result;
  result.initial_loss = icl_loss_value(model, probe, lengths);

  TaskOrder order(config.master_seed, config.num_tasks);
  AdamState state;
  std::vector<PromptMatrix> batch;
  for (std::size_t step = 0; step < config.steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const std::uint64_t pos = step * config.batch_size + b;
      // Fresh tasks live above the pool's index range.
      batch.push_back(prompt(config.fresh_tasks ? config.num_tasks + pos : order.at(pos)));
    }
    Tape tape;
    const Bound bound = models::bind(tape, model.params());
    const Var loss = icl_loss(tape, model, bound, batch, lengths);
    const auto g = tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(bound.vars.size());
    for (const auto& v : bound.vars) grads.push_back(g[v]);
    adam_step(model.params(), grads, state, config.adam);
    const double lv = loss.value().item();
    result.batch_losses.push_back(lv);
    if (hook) hook(step, lv);
    if (!std::isfinite(lv)) throw TrainingError("train: loss became non-finite at step " + std::to_string(step));
  }
  result.steps = config.steps;
  result.final_loss = icl_loss_value(model, probe, lengths);
  if (config.require_improvement && config.steps > 0 && !(result.final_loss < result.initial_loss)) {
    throw TrainingError("train: probe loss did not decrease (" + format_double(result.initial_loss) + " -> " +
                        format_double(result.final_loss) + ")");
  }
  return result;
}

// ---------------------------------------------------------------- evaluation

Predictor predictor_of(const Model& model) {
  return [&model](std::span<const PromptMatrix> prompts) {
    constexpr std::size_t kChunk = 512;
    std::vector<double> out;
    out.reserve(prompts.size());
    for (std::size_t i = 0; i < prompts.size(); i += kChunk) {
      const auto part = model.predict(prompts.subspan(i, std::min(kChunk, prompts.size() - i)));
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  };
}

const char* EvalReport::csv_header() { return "family,model,T,N,seed,normalized_mse,raw_mse,num_eval_tasks"; }

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string csv_line(const EvalRow& r) {
  return r.family + "," + r.model + "," + std::to_string(r.tasks) + "," + std::to_string(r.n) + "," +
         std::to_string(r.seed) + "," + format_double(r.normalized_mse) + "," + format_double(r.raw_mse) + "," +
         std::to_string(r.num_eval_tasks);
}

void EvalReport::write_csv(std::ostream& out, bool header) const {
  if (header) out << csv_header() << '\n';
  for (const auto& r : rows) out << csv_line(r) << '\n';
}

void EvalReport::append(const EvalReport& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

double normalizer(const tasks::TaskFamily& family, std::size_t n) {
  static std::mutex mu;
  static std::map<std::pair<std::string, std::size_t>, double> cache;
  const auto key = std::make_pair(tasks::to_json(family).dump(), n);
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  // 2000 tasks x 50 labels; every row's label has the query's distribution.
  constexpr std::size_t kTasks = 2000;
  constexpr std::size_t kLabels = 50;
  const tasks::Rng rng(0, tasks::Domain::Normalizer);
  double s = 0.0;
  for (std::size_t t = 0; t < kTasks; ++t) {
    const auto a = tasks::sample_prompt(tasks::sample_task(family, rng, t), rng, kLabels);
    for (std::size_t i = 0; i < kLabels; ++i) s += a.y(i) * a.y(i);
  }
  const double value = s / static_cast<double>(kTasks * kLabels);
  std::lock_guard lock(mu);
  cache.emplace(key, value);
  return value;
}

PromptMatrix eval_prompt(const tasks::TaskFamily& family, std::uint64_t seed, std::uint64_t t, std::size_t rows) {
  const tasks::Rng rng(seed, tasks::Domain::Eval);
  return tasks::sample_prompt(tasks::sample_task(family, rng, t), rng, rows);
}

void assert_disjoint(const tasks::Rng& train, const tasks::Rng& eval) {
  if (train.domain() == eval.domain()) {
    throw ContractError("training and evaluation generators share a seed domain");
  }
}

EvalReport evaluate(const Predictor& predict, const std::string& model_id, const tasks::TaskFamily& family,
                    std::span<const std::size_t> ns, const EvalOptions& opts, std::size_t trained_tasks) {
  if (ns.empty()) throw ContractError("evaluate: no context lengths");
  if (opts.num_eval_tasks == 0) throw ContractError("evaluate: num_eval_tasks must be >= 1");
  assert_disjoint(tasks::Rng(0, tasks::Domain::Train), tasks::Rng(opts.seed, tasks::Domain::Eval));
  const std::size_t rows = *std::max_element(ns.begin(), ns.end()) + 1;
  const tasks::Rng rng(opts.seed, tasks::Domain::Eval);

  std::vector<PromptMatrix> full;
  full.reserve(opts.num_eval_tasks);
  for (std::uint64_t t = 0; full.size() < opts.num_eval_tasks; ++t) {
    const auto task = tasks::sample_task(family, rng, t);
    if (opts.task_filter && !opts.task_filter(task)) {
      if (t > 1000 * opts.num_eval_tasks) throw ContractError("evaluate: task filter rejects almost every task");
      continue;
    }
    full.push_back(tasks::sample_prompt(task, rng, rows));
  }

  EvalReport report;
  for (std::size_t n : ns) {
    std::vector<PromptMatrix> prefixes;
    std::vector<double> targets;
    prefixes.reserve(full.size());
    for (const auto& a : full) {
      auto lp = tasks::make_labeled_prefix(a, n);
      prefixes.push_back(std::move(lp.prompt));
      targets.push_back(lp.target);
    }
    const auto pred = predict(prefixes);
    if (pred.size() != targets.size()) throw ContractError("evaluate: predictor returned the wrong count");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - targets[i]) * (pred[i] - targets[i]);
    const double raw = s / static_cast<double>(pred.size());
    report.rows.push_back(EvalRow{tasks::family_kind(family), model_id, trained_tasks, n, opts.seed,
                                  raw / normalizer(family, n), raw, full.size()});
  }
  return report;
}

// ---------------------------------------------------------------- sweeps

namespace {

void check_learner(const Learner& l) {
  if (l.model.has_value() == static_cast<bool>(l.estimator)) {
    throw ContractError("learner '" + l.id + "' needs exactly one of a model spec or an estimator");
  }
}

}  // namespace

EvalReport task_scaling_sweep(const tasks::TaskFamily& family, const Learner& learner, const TrainConfig& base,
                              std::span<const std::size_t> ts, std::size_t n, const EvalOptions& eval,
                              const CellHook& hook) {
  check_learner(learner);
  if (!std::is_sorted(ts.begin(), ts.end())) throw ContractError("task_scaling_sweep: T values must be ascending");
  const std::size_t ns[] = {n};
  EvalReport report;
  for (std::size_t t : ts) {
    if (learner.estimator) {
      report.append(evaluate(learner.estimator(family), learner.id, family, ns, eval, t));
      continue;
    }
    TrainConfig cfg = base;
    cfg.num_tasks = t;
    auto model = models::make_model(*learner.model, cfg.master_seed);
    const auto result = train(*model, family, cfg);
    if (hook) hook(*model, cfg, result);
    report.append(evaluate(predictor_of(*model), learner.id, family, ns, eval, t));
  }
  for (auto& r : report.rows) r.seed = base.master_seed;
  return report;
}

EvalReport context_scaling_sweep(const tasks::TaskFamily& family, const Learner& learner, const TrainConfig& base,
                                 std::span<const std::size_t> ns, const EvalOptions& eval, const CellHook& hook) {
  check_learner(learner);
  EvalReport report;
  if (learner.estimator) {
    report = evaluate(learner.estimator(family), learner.id, family, ns, eval, base.num_tasks);
  } else {
    if (!ns.empty() && *std::max_element(ns.begin(), ns.end()) > base.max_context()) {
      throw ContractError("context_scaling_sweep: N beyond the trained context lengths");
    }
    auto model = models::make_model(*learner.model, base.master_seed);
    const auto result = train(*model, family, base);
    if (hook) hook(*model, base, result);
    report = evaluate(predictor_of(*model), learner.id, family, ns, eval, base.num_tasks);
  }
  for (auto& r : report.rows) r.seed = base.master_seed;
  return report;
}

}  // namespace icl::train
