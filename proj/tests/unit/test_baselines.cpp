#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "icl/baselines/baselines.hpp"
#include "icl/errors.hpp"
#include "icl/ndtensor/gradcheck.hpp"
#include "oracles.hpp"

using namespace icl;
using namespace icl::baselines;
using namespace icl::tasks;

namespace {

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

LabeledPrompt eval_prompt(const TaskFamily& f, std::uint64_t seed, std::uint64_t t, std::size_t context) {
  const Rng rng(seed, Domain::Eval);
  return make_labeled_prefix(sample_prompt(sample_task(f, rng, t), rng, context + 1), context);
}

std::vector<double> design_times(const nd::Tensor& x, const std::vector<double>& w) {
  std::vector<double> out(x.dim(0), 0.0);
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t j = 0; j < x.dim(1); ++j) out[i] += x.at(i, j) * w[j];
  return out;
}

}  // namespace

TEST_CASE("ols recovers beta in the interpolation regime") {
  const auto task = sample_task(LinearFixedNoise{6, 0.0}, Rng(3), 0);
  const auto ctx = context_of(make_prefix(sample_prompt(task, Rng(3), 21), 20));
  const auto fit = ols(ctx.x, ctx.y);
  const auto& beta = std::get<LinearParams>(task.body).beta;
  for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(fit.coefficients[j] - beta[j]) < 1e-8);
  const std::vector<double> y{1.5, -2.0, 0.25};
  const auto eye = ols(nd::Tensor::identity(3), y);
  for (std::size_t j = 0; j < 3; ++j) CHECK(eye.coefficients[j] == doctest::Approx(y[j]));
}

TEST_CASE("ols with n < d returns the minimum-norm interpolant") {
  const auto x = nd::random_tensor({4, 9}, 17);
  const std::vector<double> y{0.3, -1.0, 2.0, 0.5};
  const auto fit = ols(x, y);
  // Oracle: X^T (X X^T)^{-1} y.
  oracle::Matrix m(4, std::vector<double>(9));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 9; ++j) m[i][j] = x.at(i, j);
  const auto z = oracle::solve(oracle::multiply(m, oracle::transposed(m)), y);
  for (std::size_t j = 0; j < 9; ++j) {
    double ref = 0.0;
    for (std::size_t i = 0; i < 4; ++i) ref += m[i][j] * z[i];
    CHECK(std::abs(fit.coefficients[j] - ref) < 1e-10);
  }
}

TEST_CASE("ridge limits") {
  const auto x = nd::random_tensor({30, 5}, 2);
  const auto y = nd::random_tensor({30}, 3).to_vector();
  CHECK(norm(ridge(x, y, 1e12).coefficients) < 1e-6);
  const auto r0 = ridge(x, y, 0.0);
  const auto o = ols(x, y);
  for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(r0.coefficients[j] - o.coefficients[j]) < 1e-10);
  CHECK_THROWS_AS(ridge(x, y, -1.0), ContractError);
  double prev = INFINITY;
  for (double lambda : log_grid(1e-4, 1e4, 30)) {
    const double n = norm(ridge(x, y, lambda).coefficients);
    CHECK(n <= prev + 1e-12);
    prev = n;
  }
}

TEST_CASE("bayes ridge lambda beats mis-scaled lambdas") {
  CHECK(bayes_ridge_lambda(0.5, 20) == doctest::Approx(5.0));
  const TaskFamily f = LinearFixedNoise{20, 0.5};
  const double star = bayes_ridge_lambda(0.5, 20);
  double e_star = 0.0, e_small = 0.0, e_big = 0.0;
  for (std::uint64_t t = 0; t < 1000; ++t) {
    const auto lp = eval_prompt(f, 5, t, 20);
    auto sq = [&](double lambda) {
      const double e = ridge_predict(lp.prompt, lambda) - lp.target;
      return e * e;
    };
    e_star += sq(star);
    e_small += sq(star / 10.0);
    e_big += sq(star * 10.0);
  }
  CHECK(e_star < e_small);
  CHECK(e_star < e_big);
}

TEST_CASE("lasso zero solution above the KKT threshold and scalar closed form") {
  const auto x = nd::random_tensor({12, 4}, 9);
  const auto y = nd::random_tensor({12}, 10).to_vector();
  double lmax = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    double c = 0.0;
    for (std::size_t i = 0; i < 12; ++i) c += x.at(i, j) * y[i];
    lmax = std::max(lmax, std::abs(c));
  }
  const auto zero = lasso_cd(x, y, lmax * 1.0001);
  CHECK(std::all_of(zero.coefficients.begin(), zero.coefficients.end(), [](double v) { return v == 0.0; }));

  const auto x1 = nd::random_tensor({10, 1}, 11);
  const auto y1 = nd::random_tensor({10}, 12).to_vector();
  double xy = 0.0, xx = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    xy += x1[i] * y1[i];
    xx += x1[i] * x1[i];
  }
  for (double lambda : {0.01, 0.3, 1.0, 5.0}) {
    const double ref = (xy > lambda ? xy - lambda : (xy < -lambda ? xy + lambda : 0.0)) / xx;
    CHECK(lasso_cd(x1, y1, lambda).coefficients[0] == doctest::Approx(ref).epsilon(1e-12));
  }
  CHECK_THROWS_AS(lasso_cd(x, y, 0.0), ContractError);
}

TEST_CASE("lasso objective trace is non-increasing and non-convergence is flagged") {
  const auto x = nd::random_tensor({15, 20}, 13);
  const auto y = nd::random_tensor({15}, 14).to_vector();
  const auto fit = lasso_cd(x, y, 0.05);
  CHECK(fit.converged);
  for (std::size_t i = 1; i < fit.objective_trace.size(); ++i)
    CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1] + 1e-12);
  CHECK(lasso_objective(x, y, fit.coefficients, 0.05) == doctest::Approx(fit.objective_trace.back()));
  const auto capped = lasso_cd(x, y, 1e-4, LassoOptions{1e-15, 2});
  CHECK_FALSE(capped.converged);
  CHECK(capped.iterations == 2);
}

TEST_CASE("lasso support recovery follows the irrepresentable condition") {
  // Noiseless sparse tasks, d=20, s=3, n=15. With a Gaussian design the
  // irrepresentable condition |X_Sc^T X_S (X_S^T X_S)^{-1} sign(beta_S)| < 1
  // holds for only about half of the tasks, and it is necessary for exact
  // support recovery. The oracle: recovery on the grid iff it holds.
  const TaskFamily f = SparseLinear{20, 3};
  int exact = 0;
  int condition = 0;
  int agree = 0;
  const int tasks = 200;
  for (int t = 0; t < tasks; ++t) {
    const Rng rng(77);
    const auto task = sample_task(f, rng, static_cast<std::uint64_t>(t));
    const auto& beta = std::get<LinearParams>(task.body).beta;
    const auto ctx = context_of(make_prefix(sample_prompt(task, rng, 16), 15));
    std::vector<std::size_t> support;
    for (std::size_t j = 0; j < 20; ++j)
      if (beta[j] != 0.0) support.push_back(j);
    oracle::Matrix xs(15, std::vector<double>(3));
    for (std::size_t i = 0; i < 15; ++i)
      for (std::size_t k = 0; k < 3; ++k) xs[i][k] = ctx.x.at(i, support[k]);
    std::vector<double> sign(3);
    for (std::size_t k = 0; k < 3; ++k) sign[k] = beta[support[k]] > 0 ? 1.0 : -1.0;
    const auto u = oracle::solve(oracle::multiply(oracle::transposed(xs), xs), sign);
    double worst = 0.0;
    for (std::size_t j = 0; j < 20; ++j) {
      if (beta[j] != 0.0) continue;
      double v = 0.0;
      for (std::size_t i = 0; i < 15; ++i) {
        double xsu = 0.0;
        for (std::size_t k = 0; k < 3; ++k) xsu += xs[i][k] * u[k];
        v += ctx.x.at(i, j) * xsu;
      }
      worst = std::max(worst, std::abs(v));
    }
    const bool holds = worst < 1.0;

    double lmax = 0.0;
    for (std::size_t j = 0; j < 20; ++j) {
      double c = 0.0;
      for (std::size_t i = 0; i < 15; ++i) c += ctx.x.at(i, j) * ctx.y[i];
      lmax = std::max(lmax, std::abs(c));
    }
    bool recovered = false;
    const auto grid = log_grid(1e-4, 1.0, 30);
    for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
      const auto fit = lasso_cd(ctx.x, ctx.y, *it * lmax);
      bool same = true;
      for (std::size_t j = 0; j < 20; ++j) {
        const bool nz = fit.coefficients[j] != 0.0;
        same = same && (nz == (beta[j] != 0.0));
      }
      recovered = recovered || same;
    }
    exact += recovered ? 1 : 0;
    condition += holds ? 1 : 0;
    agree += recovered == holds ? 1 : 0;
  }
  INFO("recovered " << exact << ", condition holds " << condition << ", agree " << agree);
  CHECK(agree >= tasks - 4);
}

TEST_CASE("one-step GD predictor") {
  const TaskFamily f = LinearFixedNoise{5, 0.2};
  for (std::uint64_t t = 0; t < 50; ++t) {
    const auto lp = eval_prompt(f, 1, t, 3 + t);
    CHECK(one_step_gd_predict(lp.prompt, 0.0) == 0.0);
    const double c = 0.037;
    const double closed = c * oracle::gd_closed_form(lp.prompt);
    CHECK(std::abs(one_step_gd_predict(lp.prompt, c) - closed) < 1e-12 * std::max(1.0, std::abs(closed)));
    // Linear in the labels.
    std::vector<double> doubled(lp.prompt.data().begin(), lp.prompt.data().end());
    for (std::size_t i = 0; i < lp.prompt.rows(); ++i) doubled[i * lp.prompt.cols() + lp.prompt.dim()] *= 2.0;
    const PromptMatrix b(lp.prompt.rows(), lp.prompt.dim(), doubled, true);
    CHECK(one_step_gd_predict(b, c) == doctest::Approx(2.0 * one_step_gd_predict(lp.prompt, c)).epsilon(1e-12));
  }
}

TEST_CASE("calibrated step size is close to 1/N on isotropic tasks") {
  const TaskFamily f = LinearFixedNoise{8, 0.0};
  std::vector<LabeledPrompt> train;
  for (std::uint64_t t = 0; t < 4000; ++t) train.push_back(eval_prompt(f, 2, t, 64));
  const double c = fit_one_step_gd_scale(train);
  INFO("c = " << c << ", 1/N = " << 1.0 / 64);
  CHECK(std::abs(c * 64.0 - 1.0) < 0.3);
}

TEST_CASE("smoother_predict") {
  const PromptMatrix single(2, 2, {0.4, -0.1, 2.5, 1.0, 1.0, 0.0}, true);
  for (const feat::KernelSpec& k : std::vector<feat::KernelSpec>{feat::LinearKernel{}, feat::ExponentialKernel{},
                                                                 feat::HilbertKernel{2}}) {
    CHECK(smoother_predict(single, k) == doctest::Approx(2.5).epsilon(1e-14));
  }
  const PromptMatrix constant(4, 1, {0.3, 7.0, -1.2, 7.0, 2.0, 7.0, 0.5, 0.0}, true);
  CHECK(smoother_predict(constant, feat::ExponentialKernel{}) == doctest::Approx(7.0).epsilon(1e-14));
  CHECK(smoother_predict(constant, feat::HilbertKernel{1}) == doctest::Approx(7.0).epsilon(1e-14));
  const PromptMatrix empty(1, 1, {0.5, 0.0}, true);
  CHECK_THROWS_AS(smoother_predict(empty, feat::HilbertKernel{1}), ContractError);

  const TaskFamily f = TwoLayerReLU{3, 5};
  for (std::uint64_t t = 0; t < 100; ++t) {
    const auto lp = eval_prompt(f, 4, t, 2 + t % 40);
    for (const feat::KernelSpec& k : std::vector<feat::KernelSpec>{feat::ExponentialKernel{}, feat::HilbertKernel{3}}) {
      const double pred = smoother_predict(lp.prompt, k);
      const double via_features = feat::last_element(feat::psi_K(lp.prompt, k, feat::MaskMode::ExcludeSelf));
      CHECK(std::abs(pred - via_features) < 1e-12);
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t i = 0; i < lp.prompt.context_size(); ++i) {
        lo = std::min(lo, lp.prompt.y(i));
        hi = std::max(hi, lp.prompt.y(i));
      }
      CHECK(pred >= lo - 1e-12);
      CHECK(pred <= hi + 1e-12);
    }
  }
}

TEST_CASE("exponential smoother falls back to the context mean far from the data") {
  const PromptMatrix far(3, 1, {-1.0, 2.0, -2.0, 4.0, -1e5, 0.0}, true);
  const double pred = smoother_predict(far, feat::ExponentialKernel{});
  CHECK(std::isfinite(pred));
  CHECK(pred >= 2.0);
  CHECK(pred <= 4.0);
}

TEST_CASE("grid tuning picks the best held-out value") {
  const auto grid = log_grid(1e-4, 1e2, 13);
  CHECK(grid.size() == 13);
  CHECK(grid.front() == doctest::Approx(1e-4));
  CHECK(grid.back() == doctest::Approx(1e2));
  CHECK(grid[4] == doctest::Approx(1e-2));
  std::vector<LabeledPrompt> held;
  for (std::uint64_t t = 0; t < 200; ++t) held.push_back(eval_prompt(LinearFixedNoise{8, 1.0}, 6, t, 10));
  const double best = tune_on_prompts(grid, held, [](const PromptMatrix& a, double l) { return ridge_predict(a, l); });
  // Bayes value is 8; the grid neighbours are 1 and 10.
  CHECK(best >= 1.0);
  CHECK(best <= 100.0);
}

TEST_CASE("predict_linear uses the fitted coefficients") {
  const auto x = nd::random_tensor({5, 3}, 30);
  const std::vector<double> w{0.5, -1.0, 2.0};
  const auto y = design_times(x, w);
  const auto fit = ols(x, y);
  const std::vector<double> q{1.0, 1.0, 1.0};
  CHECK(predict_linear(fit, q) == doctest::Approx(1.5));
}
