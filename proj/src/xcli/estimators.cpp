#include "icl/xcli/estimators.hpp"

#include <map>
#include <memory>
#include <mutex>

#include "icl/baselines/baselines.hpp"
#include "icl/errors.hpp"
#include "icl/jsonutil.hpp"
#include "icl/models/models.hpp"

namespace icl::xcli {

using tasks::PromptMatrix;

namespace {

const char* const kKinds[] = {"zero", "ols", "ridge", "lasso", "one_step_gd", "smoother", "psi_scalar"};

bool is_tuned(const nlohmann::json& v, const char* word) { return v.is_string() && v.get<std::string>() == word; }

// A numeric value or one of the allowed keywords.
void check_value(const nlohmann::json& params, const std::string& path, const std::string& key,
                 std::initializer_list<const char*> words, bool positive) {
  const auto& v = jsonutil::require_field(params, path, key);
  if (v.is_number()) {
    const double x = v.get<double>();
    if (positive ? !(x > 0.0) : !(x >= 0.0)) {
      throw FormatError(path + "." + key + (positive ? ": must be > 0" : ": must be >= 0"));
    }
    return;
  }
  for (const char* w : words)
    if (is_tuned(v, w)) return;
  std::string allowed = "a number";
  for (const char* w : words) allowed += std::string(" or \"") + w + "\"";
  throw FormatError(path + "." + key + ": expected " + allowed);
}

double family_sigma(const tasks::TaskFamily& f) {
  if (const auto* p = std::get_if<tasks::LinearFixedNoise>(&f)) return p->sigma;
  return -1.0;
}

// Per-N cache of a tuned scalar (or pair), safe to share across threads.
template <class V>
class PerN {
 public:
  template <class F>
  V get(std::size_t n, F&& compute) {
    std::lock_guard lock(mu_);
    auto it = values_.find(n);
    if (it == values_.end()) it = values_.emplace(n, compute()).first;
    return it->second;
  }

 private:
  std::mutex mu_;
  std::map<std::size_t, V> values_;
};

std::size_t length_of(std::span<const PromptMatrix> p) {
  const std::size_t n = p.front().context_size();
  for (const auto& a : p)
    if (a.context_size() != n) throw ContractError("estimator: prompts in one call must share a context length");
  return n;
}

template <class F>
std::vector<double> map_prompts(std::span<const PromptMatrix> p, F&& f) {
  std::vector<double> out;
  out.reserve(p.size());
  for (const auto& a : p) out.push_back(f(a));
  return out;
}

}  // namespace

EstimatorSpec estimator_from_json(const nlohmann::json& j, const std::string& path) {
  using namespace jsonutil;
  EstimatorSpec e;
  e.kind = get_string(j, path, "kind");
  bool known = false;
  for (const char* k : kKinds) known = known || e.kind == k;
  if (!known) throw FormatError(path + ".kind: unknown estimator '" + e.kind + "'");
  e.params = j;
  e.params.erase("kind");
  e.tuning_tasks = optional(j, "tuning_tasks", e.tuning_tasks, [&] { return get_size(j, path, "tuning_tasks"); });
  if (e.tuning_tasks == 0) throw FormatError(path + ".tuning_tasks: must be >= 1");
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    const std::string gp = path + ".grid";
    e.grid_lo = get_number(g, gp, "lo");
    e.grid_hi = get_number(g, gp, "hi");
    e.grid_points = static_cast<int>(get_int(g, gp, "points"));
    if (!(e.grid_lo > 0.0) || !(e.grid_hi >= e.grid_lo) || e.grid_points < 1) {
      throw FormatError(gp + ": need 0 < lo <= hi and points >= 1");
    }
  }
  if (e.kind == "ridge") {
    check_value(j, path, "lambda", {"bayes", "tuned"}, false);
    if (j.contains("sigma")) {
      if (!(get_number(j, path, "sigma") >= 0.0)) throw FormatError(path + ".sigma: must be >= 0");
    }
  } else if (e.kind == "lasso") {
    check_value(j, path, "lambda", {"tuned"}, true);
  } else if (e.kind == "one_step_gd") {
    check_value(j, path, "c", {"calibrated"}, false);
  } else if (e.kind == "smoother") {
    feat::kernel_from_json(require_field(j, path, "kernel"), path + ".kernel");
  } else if (e.kind == "psi_scalar") {
    models::feature_map_from_json(require_field(j, path, "feature"), path + ".feature");
  }
  return e;
}

nlohmann::json to_json(const EstimatorSpec& e) {
  nlohmann::json j = e.params;
  j["kind"] = e.kind;
  j["tuning_tasks"] = e.tuning_tasks;
  j["grid"] = {{"lo", e.grid_lo}, {"hi", e.grid_hi}, {"points", e.grid_points}};
  return j;
}

void validate_for_family(const EstimatorSpec& e, const tasks::TaskFamily& family, const std::string& path) {
  if (e.kind == "ridge" && is_tuned(e.params.at("lambda"), "bayes") && !e.params.contains("sigma") &&
      family_sigma(family) < 0.0) {
    throw FormatError(path + ".sigma: bayes lambda needs sigma for family " + tasks::family_kind(family));
  }
}

std::vector<tasks::LabeledPrompt> tuning_prompts(const tasks::TaskFamily& family, std::uint64_t seed,
                                                 std::size_t count, std::size_t n) {
  const tasks::Rng rng(seed, tasks::Domain::Tuning);
  std::vector<tasks::LabeledPrompt> out;
  out.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    const auto a = tasks::sample_prompt(tasks::sample_task(family, rng, t), rng, n + 1);
    out.push_back(tasks::make_labeled_prefix(a, n));
  }
  return out;
}

train::Predictor make_estimator(const EstimatorSpec& e, const tasks::TaskFamily& family, std::uint64_t tuning_seed) {
  validate_for_family(e, family, "estimator");
  const auto& p = e.params;
  const auto grid = baselines::log_grid(e.grid_lo, e.grid_hi, e.grid_points);
  auto held_out = [family, tuning_seed, count = e.tuning_tasks](std::size_t n) {
    return tuning_prompts(family, tuning_seed, count, n);
  };

  if (e.kind == "zero") {
    return [](std::span<const PromptMatrix> x) { return std::vector<double>(x.size(), 0.0); };
  }
  if (e.kind == "ols") {
    return [](std::span<const PromptMatrix> x) { return map_prompts(x, baselines::ols_predict); };
  }
  if (e.kind == "ridge") {
    const auto& lam = p.at("lambda");
    if (lam.is_number()) {
      const double l = lam.get<double>();
      return [l](std::span<const PromptMatrix> x) {
        return map_prompts(x, [l](const PromptMatrix& a) { return baselines::ridge_predict(a, l); });
      };
    }
    if (is_tuned(lam, "bayes")) {
      const double sigma = p.contains("sigma") ? p.at("sigma").get<double>() : family_sigma(family);
      const double l = baselines::bayes_ridge_lambda(sigma, tasks::input_dim(family));
      return [l](std::span<const PromptMatrix> x) {
        return map_prompts(x, [l](const PromptMatrix& a) { return baselines::ridge_predict(a, l); });
      };
    }
    auto cache = std::make_shared<PerN<double>>();
    return [cache, grid, held_out](std::span<const PromptMatrix> x) {
      if (x.empty()) return std::vector<double>{};
      const double l = cache->get(length_of(x), [&] {
        const auto h = held_out(length_of(x));
        return baselines::tune_on_prompts(grid, h, baselines::ridge_predict);
      });
      return map_prompts(x, [l](const PromptMatrix& a) { return baselines::ridge_predict(a, l); });
    };
  }
  if (e.kind == "lasso") {
    const auto& lam = p.at("lambda");
    auto lasso = [](const PromptMatrix& a, double l) { return baselines::lasso_predict(a, l); };
    if (lam.is_number()) {
      const double l = lam.get<double>();
      return [l, lasso](std::span<const PromptMatrix> x) {
        return map_prompts(x, [&](const PromptMatrix& a) { return lasso(a, l); });
      };
    }
    auto cache = std::make_shared<PerN<double>>();
    return [cache, grid, held_out, lasso](std::span<const PromptMatrix> x) {
      if (x.empty()) return std::vector<double>{};
      const double l = cache->get(length_of(x), [&] {
        const auto h = held_out(length_of(x));
        return baselines::tune_on_prompts(grid, h, lasso);
      });
      return map_prompts(x, [&](const PromptMatrix& a) { return lasso(a, l); });
    };
  }
  if (e.kind == "one_step_gd") {
    const auto& c = p.at("c");
    if (c.is_number()) {
      const double cv = c.get<double>();
      return [cv](std::span<const PromptMatrix> x) {
        return map_prompts(x, [cv](const PromptMatrix& a) { return baselines::one_step_gd_predict(a, cv); });
      };
    }
    auto cache = std::make_shared<PerN<double>>();
    return [cache, held_out](std::span<const PromptMatrix> x) {
      if (x.empty()) return std::vector<double>{};
      const double cv = cache->get(length_of(x), [&] { return baselines::fit_one_step_gd_scale(held_out(length_of(x))); });
      return map_prompts(x, [cv](const PromptMatrix& a) { return baselines::one_step_gd_predict(a, cv); });
    };
  }
  if (e.kind == "smoother") {
    const auto k = feat::kernel_from_json(p.at("kernel"), "kernel");
    return [k](std::span<const PromptMatrix> x) {
      return map_prompts(x, [&k](const PromptMatrix& a) { return baselines::smoother_predict(a, k); });
    };
  }
  // psi_scalar: least squares y ~ a * psi(A)_{N,d+1} + b.
  const auto f = models::feature_map_from_json(p.at("feature"), "feature");
  auto cache = std::make_shared<PerN<std::pair<double, double>>>();
  auto scalar = [f](const PromptMatrix& a) { return models::psi_features(f, a).back(); };
  return [cache, held_out, scalar](std::span<const PromptMatrix> x) {
    if (x.empty()) return std::vector<double>{};
    const auto ab = cache->get(length_of(x), [&] {
      const auto h = held_out(length_of(x));
      std::vector<double> feats;
      std::vector<double> ys;
      for (const auto& lp : h) {
        feats.push_back(scalar(lp.prompt));
        feats.push_back(1.0);
        ys.push_back(lp.target);
      }
      const auto fit = baselines::ols(nd::Tensor({h.size(), 2}, std::move(feats)), ys);
      return std::make_pair(fit.coefficients[0], fit.coefficients[1]);
    });
    return map_prompts(x, [&](const PromptMatrix& a) { return ab.first * scalar(a) + ab.second; });
  };
}

}  // namespace icl::xcli
