#include "icl/baselines/baselines.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "icl/errors.hpp"

namespace icl::baselines {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> as_matrix(const nd::Tensor& x) {
  if (x.rank() != 2) throw DimensionError("design matrix must be rank 2, got " + nd::to_string(x.shape()));
  return {x.data().data(), static_cast<Eigen::Index>(x.dim(0)), static_cast<Eigen::Index>(x.dim(1))};
}

Eigen::Map<const Eigen::VectorXd> as_vector(std::span<const double> y) {
  return {y.data(), static_cast<Eigen::Index>(y.size())};
}

void check_rows(const nd::Tensor& x, std::span<const double> y) {
  if (x.rank() != 2 || x.dim(0) != y.size()) {
    throw DimensionError("design " + nd::to_string(x.shape()) + " vs " + std::to_string(y.size()) + " labels");
  }
}

FitResult from_eigen(const Eigen::VectorXd& w) {
  FitResult r;
  r.coefficients.assign(w.data(), w.data() + w.size());
  return r;
}

}  // namespace

FitResult ols(const nd::Tensor& x, std::span<const double> y) {
  check_rows(x, y);
  const RowMat m = as_matrix(x);
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(m);
  FitResult r = from_eigen(cod.solve(as_vector(y)));
  r.metadata["estimator"] = "ols";
  return r;
}

FitResult ridge(const nd::Tensor& x, std::span<const double> y, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("ridge: lambda must be >= 0");
  if (lambda == 0.0) {
    FitResult r = ols(x, y);
    r.metadata = {{"estimator", "ridge"}, {"lambda", 0.0}};
    return r;
  }
  check_rows(x, y);
  const auto m = as_matrix(x);
  Eigen::MatrixXd gram = m.transpose() * m;
  gram.diagonal().array() += lambda;
  const Eigen::VectorXd rhs = m.transpose() * as_vector(y);
  FitResult r = from_eigen(gram.ldlt().solve(rhs));
  r.metadata = {{"estimator", "ridge"}, {"lambda", lambda}};
  return r;
}

double bayes_ridge_lambda(double sigma, int d) { return sigma * sigma * static_cast<double>(d); }

double soft_threshold(double z, double lambda) {
  if (z > lambda) return z - lambda;
  if (z < -lambda) return z + lambda;
  return 0.0;
}

double lasso_objective(const nd::Tensor& x, std::span<const double> y, std::span<const double> w, double lambda) {
  const auto m = as_matrix(x);
  const Eigen::VectorXd r = as_vector(y) - m * as_vector(w);
  double l1 = 0.0;
  for (double v : w) l1 += std::abs(v);
  return 0.5 * r.squaredNorm() + lambda * l1;
}

FitResult lasso_cd(const nd::Tensor& x, std::span<const double> y, double lambda, const LassoOptions& opts) {
  if (!(lambda > 0.0)) throw ContractError("lasso_cd: lambda must be > 0");
  check_rows(x, y);
  const auto m = as_matrix(x);
  const Eigen::Index d = m.cols();
  const Eigen::VectorXd col_sq = m.colwise().squaredNorm();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd resid = as_vector(y);

  FitResult r;
  r.converged = false;
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opts.max_iter; ++it) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (col_sq[j] == 0.0) continue;
      const double rho = m.col(j).dot(resid) + col_sq[j] * w[j];
      const double updated = soft_threshold(rho, lambda) / col_sq[j];
      const double delta = updated - w[j];
      if (delta != 0.0) {
        resid -= delta * m.col(j);
        w[j] = updated;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    r.iterations = it + 1;
    const double obj = 0.5 * resid.squaredNorm() + lambda * w.lpNorm<1>();
    // Exact coordinate minimization can only lower the objective.
    if (obj > prev + 1e-10 * (1.0 + std::abs(prev))) {
      throw std::logic_error("lasso_cd: objective increased during a sweep");
    }
    prev = obj;
    r.objective_trace.push_back(obj);
    if (max_change < opts.tol) {
      r.converged = true;
      break;
    }
  }
  r.coefficients.assign(w.data(), w.data() + d);
  r.metadata = {{"estimator", "lasso"}, {"lambda", lambda}};
  return r;
}

double predict_linear(const FitResult& fit, std::span<const double> x) {
  if (x.size() != fit.coefficients.size()) throw DimensionError("predict_linear: dimension mismatch");
  double s = fit.intercept;
  for (std::size_t j = 0; j < x.size(); ++j) s += fit.coefficients[j] * x[j];
  return s;
}

ContextData context_of(const tasks::PromptMatrix& a) {
  const std::size_t n = a.context_size();
  if (n == 0) throw ContractError("prompt has no context examples");
  std::vector<double> xs;
  std::vector<double> ys;
  xs.reserve(n * a.dim());
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = a.x(i);
    xs.insert(xs.end(), xi.begin(), xi.end());
    ys.push_back(a.y(i));
  }
  return {nd::Tensor({n, a.dim()}, std::move(xs)), std::move(ys)};
}

double one_step_gd_statistic(const tasks::PromptMatrix& a) {
  if (!a.query_label_zeroed()) throw ContractError("one_step_gd: query label must be zeroed");
  auto q = a.query();
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto xi = a.x(i);
    double g = 0.0;
    for (std::size_t j = 0; j < xi.size(); ++j) g += q[j] * xi[j];
    s += g * a.y(i);
  }
  return s;
}

double one_step_gd_predict(const tasks::PromptMatrix& a, double c) { return c * one_step_gd_statistic(a); }

double fit_one_step_gd_scale(std::span<const tasks::LabeledPrompt> prompts) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& p : prompts) {
    const double s = one_step_gd_statistic(p.prompt);
    num += s * p.target;
    den += s * s;
  }
  return den > 0.0 ? num / den : 0.0;
}

double smoother_predict(const tasks::PromptMatrix& a, const feat::KernelSpec& k) {
  const std::size_t n = a.context_size();
  if (n == 0) throw ContractError("smoother_predict: empty context");
  const std::size_t d = a.dim();
  auto q = a.query();
  std::vector<double> logk(n);
  // Hilbert: an exact match returns the matched labels' mean.
  if (std::holds_alternative<feat::HilbertKernel>(k)) {
    double match_sum = 0.0;
    std::size_t matches = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double kv = feat::hilbert_kernel(q, a.x(i));
      if (feat::is_exact_match(kv)) {
        match_sum += a.y(i);
        ++matches;
      }
    }
    if (matches) return match_sum / static_cast<double>(matches);
  }
  double num = 0.0;
  double den = 0.0;
  if (std::holds_alternative<feat::LinearKernel>(k)) {
    for (std::size_t i = 0; i < n; ++i) {
      const double kv = feat::kernel_value(k, q, a.x(i));
      num += kv * a.y(i);
      den += kv;
    }
  } else {
    // Positive kernels: evaluate K_i / K_max so exp() cannot overflow.
    for (std::size_t i = 0; i < n; ++i) {
      double dotv = 0.0;
      double dist2 = 0.0;
      auto xi = a.x(i);
      for (std::size_t j = 0; j < d; ++j) {
        dotv += q[j] * xi[j];
        dist2 += (q[j] - xi[j]) * (q[j] - xi[j]);
      }
      logk[i] = std::holds_alternative<feat::ExponentialKernel>(k)
                    ? dotv
                    : -0.5 * static_cast<double>(std::get<feat::HilbertKernel>(k).d) * std::log(dist2);
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logk) mx = std::max(mx, v);
    for (std::size_t i = 0; i < n; ++i) {
      const double kv = std::exp(logk[i] - mx);
      num += kv * a.y(i);
      den += kv;
    }
  }
  if (!(std::abs(den) >= 1e-300) || !std::isfinite(num)) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a.y(i);
    return mean / static_cast<double>(n);
  }
  return num / den;
}

double ridge_predict(const tasks::PromptMatrix& a, double lambda) {
  const auto ctx = context_of(a);
  return predict_linear(ridge(ctx.x, ctx.y, lambda), a.query());
}

double ols_predict(const tasks::PromptMatrix& a) {
  const auto ctx = context_of(a);
  return predict_linear(ols(ctx.x, ctx.y), a.query());
}

double lasso_predict(const tasks::PromptMatrix& a, double lambda, const LassoOptions& opts) {
  const auto ctx = context_of(a);
  return predict_linear(lasso_cd(ctx.x, ctx.y, lambda, opts), a.query());
}

std::vector<double> log_grid(double lo, double hi, int points) {
  if (points < 1 || !(lo > 0.0) || !(hi >= lo)) throw ContractError("log_grid: need 0 < lo <= hi, points >= 1");
  std::vector<double> g(static_cast<std::size_t>(points));
  if (points == 1) {
    g[0] = lo;
    return g;
  }
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (int i = 0; i < points; ++i) g[static_cast<std::size_t>(i)] = std::pow(10.0, a + (b - a) * i / (points - 1));
  return g;
}

double tune_on_prompts(const std::vector<double>& grid, std::span<const tasks::LabeledPrompt> held_out,
                       const std::function<double(const tasks::PromptMatrix&, double)>& predict) {
  if (grid.empty()) throw ContractError("tune_on_prompts: empty grid");
  double best = grid.front();
  double best_err = std::numeric_limits<double>::infinity();
  for (double v : grid) {
    double err = 0.0;
    for (const auto& p : held_out) {
      const double e = predict(p.prompt, v) - p.target;
      err += e * e;
    }
    if (err < best_err) {
      best_err = err;
      best = v;
    }
  }
  return best;
}

}  // namespace icl::baselines
