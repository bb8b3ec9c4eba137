#include "icl/xcli/presets.hpp"

namespace icl::xcli {

namespace {

using nlohmann::json;

json linear(int d, double sigma) { return {{"kind", "linear_fixed_noise"}, {"d", d}, {"sigma", sigma}}; }

json train(std::vector<int> contexts, int steps, double lr = 1e-3) {
  return {{"context_lengths", contexts}, {"batch_size", 64}, {"steps", steps}, {"lr", lr}};
}

json learner(const std::string& id, const json& model) { return {{"id", id}, {"model", model}}; }
json estimator(const std::string& id, const json& e) { return {{"id", id}, {"estimator", e}}; }

json mlp(const std::string& input, int width, const json& feature = nullptr) {
  json m{{"kind", "mlp"}, {"input", input}, {"width", width}};
  if (!feature.is_null()) m["feature"] = feature;
  return m;
}

json with_steps(json l, int steps) {
  l["train"] = {{"steps", steps}};
  return l;
}

json sgpt(int layers, int width) { return {{"kind", "sgpt"}, {"layers", layers}, {"width", width}}; }

const json kHilbert = {{"map", "psi_K"}, {"kernel", {{"kind", "hilbert"}}}};
const json kPsiL = {{"map", "psi_L"}};

json task_sweep(std::vector<int> ts, int n) { return {{"kind", "task_scaling"}, {"T", ts}, {"N", n}}; }
json context_sweep(int t, std::vector<int> ns) { return {{"kind", "context_scaling"}, {"T", t}, {"N", ns}}; }

std::vector<Preset> build() {
  std::vector<Preset> out;

  // Vectorized MLP vs two-layer SGPT on linear tasks. d=5, sigma=0.22,
  // contexts {5,10,20,40}, T in {1e3,1e4,1e5}, 3 seeds. The MLP is one hidden
  // layer of width 256 trained for 5000 steps; SGPT (k=32) gets 6000.
  out.push_back({"fig1-desk", "MLP task-scales but does not context-scale; SGPT does both (linear, d=5)",
                 {{"name", "fig1-desk"},
                  {"description", "Task and context scaling of a vectorized MLP and a two-layer SGPT on linear tasks"},
                  {"seeds", {0, 1, 2}},
                  {"label", "linear"},
                  {"family", linear(5, 0.22)},
                  {"train", train({5, 10, 20, 40}, 5000)},
                  {"eval", {{"tasks", 1000}, {"seed", 7}}},
                  {"learners",
                   {learner("mlp", mlp("vectorized", 256)), with_steps(learner("sgpt", sgpt(2, 32)), 6000),
                    estimator("ridge_bayes", {{"kind", "ridge"}, {"lambda", "bayes"}})}},
                  {"sweeps", {task_sweep({1000, 10000, 100000}, 10), context_sweep(100000, {5, 10, 20, 40})}}}});

  // SGPT against Bayes-optimal and tuned ridge. d=8, sigma=0.5, contexts
  // 10..40 step 10, T=1e4.
  out.push_back({"fig2-ridge-desk", "SGPT vs Bayes and tuned ridge on linear tasks with fixed noise (d=8)",
                 {{"name", "fig2-ridge-desk"},
                  {"description", "Linear regression with one noise level: SGPT against ridge"},
                  {"seeds", {0}},
                  {"label", "linear_sigma0.5"},
                  {"family", linear(8, 0.5)},
                  {"train", train({10, 20, 30, 40}, 2000)},
                  {"eval", {{"tasks", 1000}, {"seed", 7}}},
                  {"learners",
                   {learner("sgpt", sgpt(2, 32)), estimator("ridge_bayes", {{"kind", "ridge"}, {"lambda", "bayes"}}),
                    estimator("ridge_tuned", {{"kind", "ridge"}, {"lambda", "tuned"}}),
                    estimator("ols", {{"kind", "ols"}})}},
                  {"sweeps", {context_sweep(10000, {10, 20, 30, 40})}}}});

  // One SGPT trained on the two-level noise mixture, scored on each level
  // against ridge tuned to either level. d=8, sigma in {0.1, 0.5}.
  {
    const json family{{"kind", "linear_mixed_noise"}, {"d", 8}, {"sigma1", 0.1}, {"sigma2", 0.5}};
    json blocks = json::array();
    for (double s : {0.1, 0.5}) {
      blocks.push_back({{"label", s == 0.1 ? "mixed_sigma0.1" : "mixed_sigma0.5"},
                        {"family", family},
                        {"train", train({10, 20, 30, 40}, 2000)},
                        {"eval", {{"tasks", 1000}, {"seed", 7}, {"noise_sigma", s}}},
                        {"learners",
                         {learner("sgpt", sgpt(2, 32)),
                          estimator("ridge_sigma0.1", {{"kind", "ridge"}, {"lambda", "bayes"}, {"sigma", 0.1}}),
                          estimator("ridge_sigma0.5", {{"kind", "ridge"}, {"lambda", "bayes"}, {"sigma", 0.5}})}},
                        {"sweeps", {context_sweep(10000, {10, 20, 30, 40})}}});
    }
    out.push_back({"fig3-mixed-noise-desk", "SGPT on a two-level noise mixture vs per-level Bayes ridge (d=8)",
                   {{"name", "fig3-mixed-noise-desk"},
                    {"description", "Linear regression with two noise levels, scored per level"},
                    {"seeds", {0}},
                    {"blocks", blocks}}});
  }

  // Depth-4 trees and width-100 ReLU teachers at d=8, 3-sparse linear tasks at
  // d=20 with N up to d so that OLS is underdetermined, each against classical
  // baselines.
  {
    const json trained = learner("sgpt", sgpt(2, 32));
    const json blocks = {
        {{"label", "decision_tree"},
         {"family", {{"kind", "decision_tree"}, {"d", 8}, {"depth", 4}}},
         {"train", train({10, 20, 30, 40}, 2000)},
         {"eval", {{"tasks", 1000}, {"seed", 7}}},
         {"learners",
          {trained, estimator("hilbert", {{"kind", "smoother"}, {"kernel", {{"kind", "hilbert"}}}}),
           estimator("zero", {{"kind", "zero"}})}},
         {"sweeps", {context_sweep(10000, {10, 20, 30, 40})}}},
        {{"label", "two_layer_relu"},
         {"family", {{"kind", "two_layer_relu"}, {"d", 8}, {"r", 100}}},
         {"train", train({10, 20, 30, 40}, 2000)},
         {"eval", {{"tasks", 1000}, {"seed", 7}}},
         {"learners",
          {trained, estimator("ridge_tuned", {{"kind", "ridge"}, {"lambda", "tuned"}}),
           estimator("hilbert", {{"kind", "smoother"}, {"kernel", {{"kind", "hilbert"}}}})}},
         {"sweeps", {context_sweep(10000, {10, 20, 30, 40})}}},
        {{"label", "sparse_linear"},
         {"family", {{"kind", "sparse_linear"}, {"d", 20}, {"s", 3}}},
         {"train", train({5, 10, 15, 20}, 2000)},
         {"eval", {{"tasks", 1000}, {"seed", 7}}},
         {"learners",
          {trained, estimator("lasso_tuned", {{"kind", "lasso"}, {"lambda", "tuned"}}),
           estimator("ols", {{"kind", "ols"}})}},
         {"sweeps", {context_sweep(10000, {5, 10, 15, 20})}}}};
    out.push_back({"fig4-nonlinear-desk", "SGPT on decision trees and ReLU teachers (d=8) and sparse linear tasks (d=20)",
                   {{"name", "fig4-nonlinear-desk"},
                    {"description", "Nonlinear and sparse task families against classical baselines"},
                    {"seeds", {0}},
                    {"blocks", blocks}}});
  }

  // One-layer SGPT trained and tested on contexts 10..50 step 10, d=8.
  {
    json blocks = json::array();
    const std::vector<std::pair<std::string, json>> families = {
        {"linear", linear(8, 0.22)},
        {"two_layer_relu", {{"kind", "two_layer_relu"}, {"d", 8}, {"r", 100}}},
        {"decision_tree", {{"kind", "decision_tree"}, {"d", 8}, {"depth", 4}}},
        {"sparse_linear", {{"kind", "sparse_linear"}, {"d", 8}, {"s", 3}}}};
    for (const auto& [label, family] : families) {
      blocks.push_back({{"label", label},
                        {"family", family},
                        {"train", train({10, 20, 30, 40, 50}, 2000)},
                        {"eval", {{"tasks", 1000}, {"seed", 7}}},
                        {"learners", {learner("sgpt_1layer", sgpt(1, 32))}},
                        {"sweeps", {context_sweep(10000, {10, 20, 30, 40, 50})}}});
    }
    out.push_back({"fig5-onelayer-desk", "A single SGPT layer context-scales on four task families (d=8)",
                   {{"name", "fig5-onelayer-desk"},
                    {"description", "Context scaling of one-layer SGPT"},
                    {"seeds", {0}},
                    {"blocks", blocks}}});
  }

  // Hilbert features: MLP on the whole last row vs MLP on its last element,
  // plus a least-squares fit on that scalar. d=8, sigma=0.22, T=1e4, width
  // 128, 2000 steps.
  out.push_back({"fig6-lastelem-desk", "The last element of the Hilbert features suffices for context scaling (d=8)",
                 {{"name", "fig6-lastelem-desk"},
                  {"description", "MLP on psi_H last row vs last element"},
                  {"seeds", {0, 1, 2}},
                  {"label", "linear"},
                  {"family", linear(8, 0.22)},
                  {"train", train({10, 20, 30, 40}, 2000)},
                  {"eval", {{"tasks", 1000}, {"seed", 7}}},
                  {"learners",
                   {learner("mlp_last_row", mlp("psi_last_row", 128, kHilbert)),
                    learner("mlp_last_element", mlp("psi_last_element", 128, kHilbert)),
                    estimator("lsq_last_element", {{"kind", "psi_scalar"}, {"feature", kHilbert}})}},
                  {"sweeps", {context_sweep(10000, {10, 20, 30, 40})}}}});

  // MLPs on vectorized prompts, on psi_H or psi_L features, and on both.
  // d=8, sigma=0.22, contexts {10,20,40}, T in {1e3,1e4,1e5}, 3 seeds, width
  // 128, 2000 steps. Longer training puts the interpolation peak of the
  // vectorized input near T=1e4 and breaks the task-scaling trend.
  out.push_back({"fig7-concat-desk", "Concatenating Hilbert features lets an MLP task-scale and context-scale (d=8)",
                 {{"name", "fig7-concat-desk"},
                  {"description", "MLP inputs: vectorized, psi_H last row, and their concatenation"},
                  {"seeds", {0, 1, 2}},
                  {"label", "linear"},
                  {"family", linear(8, 0.22)},
                  {"train", train({10, 20, 40}, 2000)},
                  {"eval", {{"tasks", 1000}, {"seed", 7}}},
                  {"learners",
                   {learner("mlp_vectorized", mlp("vectorized", 128)),
                    learner("mlp_psi_H", mlp("psi_last_row", 128, kHilbert)),
                    learner("mlp_concat_psi_H", mlp("concat", 128, kHilbert)),
                    learner("mlp_psi_L", mlp("psi_last_row", 128, kPsiL)),
                    learner("mlp_concat_psi_L", mlp("concat", 128, kPsiL)),
                    estimator("hilbert", {{"kind", "smoother"}, {"kernel", {{"kind", "hilbert"}}}})}},
                  {"sweeps", {task_sweep({1000, 10000, 100000}, 10), context_sweep(100000, {10, 20, 40})}}}});

  // Two-layer SGPT vs a two-layer, two-head reference transformer on linear
  // (sigma=0.22) and ReLU-teacher (r=100) tasks, d=8.
  {
    json blocks = json::array();
    const std::vector<std::pair<std::string, json>> families = {
        {"linear", linear(8, 0.22)}, {"two_layer_relu", {{"kind", "two_layer_relu"}, {"d", 8}, {"r", 100}}}};
    for (const auto& [label, family] : families) {
      blocks.push_back({{"label", label},
                        {"family", family},
                        {"train", train({10, 20, 30, 40}, 2000)},
                        {"eval", {{"tasks", 1000}, {"seed", 7}}},
                        {"learners",
                         {learner("sgpt", sgpt(2, 32)),
                          learner("ref_transformer",
                                  {{"kind", "ref_transformer"}, {"layers", 2}, {"heads", 2}, {"width", 32}})}},
                        {"sweeps", {task_sweep({1000, 10000}, 10), context_sweep(10000, {10, 20, 30, 40})}}});
    }
    out.push_back({"fig8-sgpt-vs-ref-desk", "SGPT and a reference transformer both task-scale and context-scale (d=8)",
                   {{"name", "fig8-sgpt-vs-ref-desk"},
                    {"description", "SGPT against a softmax transformer with layer norm and MLP blocks"},
                    {"seeds", {0}},
                    {"blocks", blocks}}});
  }
  return out;
}

}  // namespace

const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = build();
  return all;
}

std::optional<Preset> find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  return std::nullopt;
}

}  // namespace icl::xcli
