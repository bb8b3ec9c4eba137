#include "icl/ndtensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "icl/errors.hpp"

namespace icl::nd {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

void require_rank(const char* op, const Var& a, std::size_t lo, std::size_t hi) {
  if (a.shape().size() < lo || a.shape().size() > hi) {
    throw DimensionError(std::string(op) + ": unsupported rank for shape " + to_string(a.shape()));
  }
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

// Elementwise unary op with derivative computed from the input value.
template <class F, class DF>
Var unary(const char* name, const Var& a, F f, DF df) {
  const Tensor& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return a.tape().record(name, Tensor(av.shape(), std::move(out)), {a},
                         [a, av, df](std::span<const double> g, GradSink& sink) {
                           auto ga = sink.grad(a);
                           if (ga.empty()) return;
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(av[i]);
                         });
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_error("matmul", sa, sb);
  const auto m = static_cast<Eigen::Index>(sa[0]);
  const auto k = static_cast<Eigen::Index>(sa[1]);
  const auto n = static_cast<Eigen::Index>(sb[1]);
  const Tensor av = a.value();
  const Tensor bv = b.value();
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MutMap(out.data(), m, n).noalias() = ConstMap(av.data().data(), m, k) * ConstMap(bv.data().data(), k, n);
  return a.tape().record(
      "matmul", Tensor({sa[0], sb[1]}, std::move(out)), {a, b},
      [a, b, av, bv, m, k, n](std::span<const double> g, GradSink& sink) {
        ConstMap G(g.data(), m, n);
        if (auto ga = sink.grad(a); !ga.empty()) {
          MutMap(ga.data(), m, k).noalias() += G * ConstMap(bv.data().data(), k, n).transpose();
        }
        if (auto gb = sink.grad(b); !gb.empty()) {
          MutMap(gb.data(), k, n).noalias() += ConstMap(av.data().data(), m, k).transpose() * G;
        }
      });
}

Var batched_matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1]) {
    shape_error("batched_matmul", sa, sb);
  }
  const std::size_t batch = sa[0];
  const auto m = static_cast<Eigen::Index>(sa[1]);
  const auto k = static_cast<Eigen::Index>(sa[2]);
  const auto n = static_cast<Eigen::Index>(sb[2]);
  const Tensor av = a.value();
  const Tensor bv = b.value();
  const std::size_t sa_stride = static_cast<std::size_t>(m * k);
  const std::size_t sb_stride = static_cast<std::size_t>(k * n);
  const std::size_t so_stride = static_cast<std::size_t>(m * n);
  std::vector<double> out(batch * so_stride);
  for (std::size_t t = 0; t < batch; ++t) {
    MutMap(out.data() + t * so_stride, m, n).noalias() =
        ConstMap(av.data().data() + t * sa_stride, m, k) * ConstMap(bv.data().data() + t * sb_stride, k, n);
  }
  return a.tape().record(
      "batched_matmul", Tensor({batch, sa[1], sb[2]}, std::move(out)), {a, b},
      [=](std::span<const double> g, GradSink& sink) {
        auto ga = sink.grad(a);
        auto gb = sink.grad(b);
        for (std::size_t t = 0; t < batch; ++t) {
          ConstMap G(g.data() + t * so_stride, m, n);
          if (!ga.empty()) {
            MutMap(ga.data() + t * sa_stride, m, k).noalias() +=
                G * ConstMap(bv.data().data() + t * sb_stride, k, n).transpose();
          }
          if (!gb.empty()) {
            MutMap(gb.data() + t * sb_stride, k, n).noalias() +=
                ConstMap(av.data().data() + t * sa_stride, m, k).transpose() * G;
          }
        }
      });
}

Var transpose(const Var& a) {
  require_rank("transpose", a, 2, 3);
  const Shape& s = a.shape();
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t m = s[s.size() - 2];
  const std::size_t n = s[s.size() - 1];
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  const Tensor av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t t = 0; t < batch; ++t) {
    const std::size_t off = t * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[off + j * m + i] = av[off + i * n + j];
  }
  return a.tape().record("transpose", Tensor(std::move(out_shape), std::move(out)), {a},
                         [a, batch, m, n](std::span<const double> g, GradSink& sink) {
                           auto ga = sink.grad(a);
                           if (ga.empty()) return;
                           for (std::size_t t = 0; t < batch; ++t) {
                             const std::size_t off = t * m * n;
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j) ga[off + i * n + j] += g[off + j * m + i];
                           }
                         });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a}, [a](std::span<const double> g, GradSink& sink) {
    auto ga = sink.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape().record("add", Tensor(av.shape(), std::move(out)), {a, b},
                         [a, b](std::span<const double> g, GradSink& sink) {
                           for (const Var* v : {&a, &b}) {
                             auto gv = sink.grad(*v);
                             for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g[i];
                           }
                         });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return a.tape().record("sub", Tensor(av.shape(), std::move(out)), {a, b},
                         [a, b](std::span<const double> g, GradSink& sink) {
                           auto ga = sink.grad(a);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                           auto gb = sink.grad(b);
                           for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                         });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  const Tensor av = a.value();
  const Tensor bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record("mul", Tensor(av.shape(), std::move(out)), {a, b},
                         [a, b, av, bv](std::span<const double> g, GradSink& sink) {
                           auto ga = sink.grad(a);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
                           auto gb = sink.grad(b);
                           for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
                         });
}

Var scale(const Var& a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Var add_bias(const Var& a, const Var& bias) {
  const std::size_t n = last_dim(a.shape());
  if (bias.shape() != Shape{n}) shape_error("add_bias", a.shape(), bias.shape());
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % n];
  return a.tape().record("add_bias", Tensor(av.shape(), std::move(out)), {a, bias},
                         [a, bias, n](std::span<const double> g, GradSink& sink) {
                           auto ga = sink.grad(a);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                           auto gb = sink.grad(bias);
                           if (!gb.empty())
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                         });
}

Var row_l1_normalize(const Var& a) {
  const Tensor av = a.value();
  const std::size_t n = last_dim(av.shape());
  const std::size_t rows = av.size() / n;
  std::vector<double> norms(rows);
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::abs(av[r * n + j]);
    s = std::max(s, kL1NormEpsilon);
    norms[r] = s;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = av[r * n + j] / s;
  }
  return a.tape().record(
      "row_l1_normalize", Tensor(av.shape(), std::move(out)), {a},
      [a, av, norms, n, rows](std::span<const double> g, GradSink& sink) {
        auto ga = sink.grad(a);
        if (ga.empty()) return;
        for (std::size_t r = 0; r < rows; ++r) {
          const double s = norms[r];
          const std::size_t off = r * n;
          if (s <= kL1NormEpsilon) {
            for (std::size_t j = 0; j < n; ++j) ga[off + j] += g[off + j] / s;
            continue;
          }
          double gv = 0.0;
          for (std::size_t i = 0; i < n; ++i) gv += g[off + i] * av[off + i];
          for (std::size_t j = 0; j < n; ++j) {
            const double v = av[off + j];
            const double sign = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
            ga[off + j] += g[off + j] / s - sign * gv / (s * s);
          }
        }
      });
}

Var row_softmax(const Var& a, const std::optional<Tensor>& mask) {
  const Tensor& av = a.value();
  if (mask && mask->shape() != av.shape()) shape_error("row_softmax mask", av.shape(), mask->shape());
  const std::size_t n = last_dim(av.shape());
  const std::size_t rows = av.size() / n;
  std::vector<double> out(av.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && (*mask)[off + j] == 0.0) continue;
      mx = std::max(mx, av[off + j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && (*mask)[off + j] == 0.0) continue;
      out[off + j] = std::exp(av[off + j] - mx);
      z += out[off + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[off + j] /= z;
  }
  Tensor y(av.shape(), std::move(out));
  return a.tape().record("row_softmax", y, {a}, [a, y, n, rows](std::span<const double> g, GradSink& sink) {
    auto ga = sink.grad(a);
    if (ga.empty()) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[off + j] * y[off + j];
      for (std::size_t j = 0; j < n; ++j) ga[off + j] += y[off + j] * (g[off + j] - dot);
    }
  });
}

Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps) {
  const std::size_t n = last_dim(a.shape());
  if (gain.shape() != Shape{n}) shape_error("layer_norm gain", a.shape(), gain.shape());
  if (bias.shape() != Shape{n}) shape_error("layer_norm bias", a.shape(), bias.shape());
  const Tensor& av = a.value();
  const Tensor gv = gain.value();
  const Tensor& bv = bias.value();
  const std::size_t rows = av.size() / n;
  std::vector<double> xhat(av.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += av[off + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (av[off + j] - mu) * (av[off + j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[off + j] = (av[off + j] - mu) * inv_std[r];
      out[off + j] = xhat[off + j] * gv[j] + bv[j];
    }
  }
  return a.tape().record(
      "layer_norm", Tensor(av.shape(), std::move(out)), {a, gain, bias},
      [a, gain, bias, gv, xhat, inv_std, n, rows](std::span<const double> g, GradSink& sink) {
        auto ga = sink.grad(a);
        auto gg = sink.grad(gain);
        auto gb = sink.grad(bias);
        const double nn = static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t off = r * n;
          double mean_dx = 0.0;
          double mean_dx_xhat = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            if (!gg.empty()) gg[j] += g[off + j] * xhat[off + j];
            if (!gb.empty()) gb[j] += g[off + j];
            const double dxhat = g[off + j] * gv[j];
            mean_dx += dxhat;
            mean_dx_xhat += dxhat * xhat[off + j];
          }
          if (ga.empty()) continue;
          mean_dx /= nn;
          mean_dx_xhat /= nn;
          for (std::size_t j = 0; j < n; ++j) {
            const double dxhat = g[off + j] * gv[j];
            ga[off + j] += inv_std[r] * (dxhat - mean_dx - xhat[off + j] * mean_dx_xhat);
          }
        }
      });
}

Var gelu(const Var& a) {
  return unary(
      "gelu", a, [](double x) { return x * std_normal_cdf(x); },
      [](double x) { return std_normal_cdf(x) + x * std_normal_pdf(x); });
}

Var relu(const Var& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var concat_last(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    shape_error("concat_last", sa, sb);
  }
  const std::size_t na = sa.back();
  const std::size_t nb = sb.back();
  const std::size_t rows = a.value().size() / na;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  std::vector<double> out(rows * (na + nb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(r * na), na, out.begin() + static_cast<std::ptrdiff_t>(r * (na + nb)));
    std::copy_n(bv.data().begin() + static_cast<std::ptrdiff_t>(r * nb), nb,
                out.begin() + static_cast<std::ptrdiff_t>(r * (na + nb) + na));
  }
  Shape so = sa;
  so.back() = na + nb;
  return a.tape().record("concat_last", Tensor(std::move(so), std::move(out)), {a, b},
                         [a, b, na, nb, rows](std::span<const double> g, GradSink& sink) {
                           auto ga = sink.grad(a);
                           auto gb = sink.grad(b);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const std::size_t off = r * (na + nb);
                             if (!ga.empty())
                               for (std::size_t j = 0; j < na; ++j) ga[r * na + j] += g[off + j];
                             if (!gb.empty())
                               for (std::size_t j = 0; j < nb; ++j) gb[r * nb + j] += g[off + na + j];
                           }
                         });
}

Var concat_rows(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1]) shape_error("concat_rows", sa, sb);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  std::vector<double> out;
  out.reserve(av.size() + bv.size());
  out.insert(out.end(), av.data().begin(), av.data().end());
  out.insert(out.end(), bv.data().begin(), bv.data().end());
  const std::size_t split = av.size();
  return a.tape().record("concat_rows", Tensor({sa[0] + sb[0], sa[1]}, std::move(out)), {a, b},
                         [a, b, split](std::span<const double> g, GradSink& sink) {
                           auto ga = sink.grad(a);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                           auto gb = sink.grad(b);
                           for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[split + i];
                         });
}

Var select_row(const Var& a, std::size_t i) {
  require_rank("select_row", a, 2, 3);
  const Shape& s = a.shape();
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t n = s[s.size() - 2];
  const std::size_t k = s.back();
  if (i >= n) throw ContractError("select_row: row " + std::to_string(i) + " out of range for " + to_string(s));
  const Tensor& av = a.value();
  std::vector<double> out(batch * k);
  for (std::size_t t = 0; t < batch; ++t)
    for (std::size_t j = 0; j < k; ++j) out[t * k + j] = av[(t * n + i) * k + j];
  Shape so = s.size() == 3 ? Shape{batch, k} : Shape{k};
  return a.tape().record("select_row", Tensor(std::move(so), std::move(out)), {a},
                         [a, batch, n, k, i](std::span<const double> g, GradSink& sink) {
                           auto ga = sink.grad(a);
                           if (ga.empty()) return;
                           for (std::size_t t = 0; t < batch; ++t)
                             for (std::size_t j = 0; j < k; ++j) ga[(t * n + i) * k + j] += g[t * k + j];
                         });
}

Var slice_last(const Var& a, std::size_t start, std::size_t len) {
  const Shape& s = a.shape();
  if (s.empty() || len == 0 || start + len > s.back()) {
    throw DimensionError("slice_last: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of range for " + to_string(s));
  }
  const std::size_t n = s.back();
  const std::size_t rows = a.value().size() / n;
  const Tensor& av = a.value();
  std::vector<double> out(rows * len);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = av[r * n + start + j];
  Shape so = s;
  so.back() = len;
  return a.tape().record("slice_last", Tensor(std::move(so), std::move(out)), {a},
                         [a, n, rows, start, len](std::span<const double> g, GradSink& sink) {
                           auto ga = sink.grad(a);
                           if (ga.empty()) return;
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < len; ++j) ga[r * n + start + j] += g[r * len + j];
                         });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return a.tape().record("sum", Tensor::scalar(s), {a}, [a](std::span<const double> g, GradSink& sink) {
    auto ga = sink.grad(a);
    for (double& x : ga) x += g[0];
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return a.tape().record("mean", Tensor::scalar(s / n), {a}, [a, n](std::span<const double> g, GradSink& sink) {
    auto ga = sink.grad(a);
    for (double& x : ga) x += g[0] / n;
  });
}

Var squared_error(const Var& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) shape_error("squared_error", pred.shape(), target.shape());
  const Tensor pv = pred.value();
  const double n = static_cast<double>(pv.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) s += (pv[i] - target[i]) * (pv[i] - target[i]);
  return pred.tape().record("squared_error", Tensor::scalar(s / n), {pred},
                            [pred, pv, target, n](std::span<const double> g, GradSink& sink) {
                              auto gp = sink.grad(pred);
                              for (std::size_t i = 0; i < gp.size(); ++i)
                                gp[i] += g[0] * 2.0 * (pv[i] - target[i]) / n;
                            });
}

}  // namespace icl::nd
