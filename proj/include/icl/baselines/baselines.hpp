#pragma once

#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "icl/featmap/featmap.hpp"
#include "icl/ndtensor/tensor.hpp"
#include "icl/taskgen/prompt.hpp"

namespace icl::baselines {

/// Coefficients of a fitted linear predictor. Intercepts are always zero
/// because every task family is centered.
struct FitResult {
  std::vector<double> coefficients;
  double intercept = 0.0;
  nlohmann::json metadata = nlohmann::json::object();
  bool converged = true;
  int iterations = 0;
  // Lasso only: objective after each coordinate sweep.
  std::vector<double> objective_trace;
};

// Minimum-norm least squares (pseudoinverse); valid for n < d.
FitResult ols(const nd::Tensor& x, std::span<const double> y);
// (X^T X + lambda I)^{-1} X^T y; lambda == 0 delegates to ols.
FitResult ridge(const nd::Tensor& x, std::span<const double> y, double lambda);
// Posterior-mean regularization for beta ~ N(0, I/d) and noise sigma.
double bayes_ridge_lambda(double sigma, int d);

struct LassoOptions {
  double tol = 1e-8;
  int max_iter = 10000;
};
// Cyclic coordinate descent on 0.5 ||y - Xw||^2 + lambda ||w||_1. Hitting
// max_iter sets converged = false instead of throwing.
FitResult lasso_cd(const nd::Tensor& x, std::span<const double> y, double lambda, const LassoOptions& opts = {});
double lasso_objective(const nd::Tensor& x, std::span<const double> y, std::span<const double> w, double lambda);
double soft_threshold(double z, double lambda);

double predict_linear(const FitResult& fit, std::span<const double> x);

/// Context rows of a prompt as a regression dataset.
struct ContextData {
  nd::Tensor x;
  std::vector<double> y;
};
ContextData context_of(const tasks::PromptMatrix& a);

// x_N^T X^T y over the whole prompt (the query row contributes nothing).
double one_step_gd_statistic(const tasks::PromptMatrix& a);
double one_step_gd_predict(const tasks::PromptMatrix& a, double c);
// argmin_c sum_t (c s_t - y_t)^2 over labeled prefixes.
double fit_one_step_gd_scale(std::span<const tasks::LabeledPrompt> prompts);

// Kernel smoother at the query using context rows only. A degenerate
// denominator (|sum K| < 1e-300) falls back to the mean context label.
double smoother_predict(const tasks::PromptMatrix& a, const feat::KernelSpec& k);

// Fits on the prompt's context and predicts its query.
double ridge_predict(const tasks::PromptMatrix& a, double lambda);
double ols_predict(const tasks::PromptMatrix& a);
double lasso_predict(const tasks::PromptMatrix& a, double lambda, const LassoOptions& opts = {});

// `points` log-spaced values from lo to hi inclusive.
std::vector<double> log_grid(double lo, double hi, int points);
// Grid value with the lowest mean squared error on held-out prompts; ties go
// to the earlier grid entry.
double tune_on_prompts(const std::vector<double>& grid, std::span<const tasks::LabeledPrompt> held_out,
                       const std::function<double(const tasks::PromptMatrix&, double)>& predict);

}  // namespace icl::baselines
