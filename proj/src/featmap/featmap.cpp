#include "icl/featmap/featmap.hpp"

#include <algorithm>
#include <cmath>

#include "icl/errors.hpp"
#include "icl/overloaded.hpp"

namespace icl::feat {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

constexpr double kDegenerateDenominator = 1e-300;

std::vector<bool> allowed_for_row(std::size_t i, std::size_t n, MaskMode mask) {
  std::vector<bool> allowed(n, true);
  if (mask == MaskMode::ExcludeSelf || mask == MaskMode::StrictCausal) allowed[i] = false;
  if (mask == MaskMode::StrictCausal)
    for (std::size_t j = i + 1; j < n; ++j) allowed[j] = false;
  return allowed;
}

}  // namespace

std::string kernel_name(const KernelSpec& k) {
  return std::visit(overloaded{
                        [](const LinearKernel&) { return std::string("linear"); },
                        [](const ExponentialKernel&) { return std::string("exponential"); },
                        [](const HilbertKernel&) { return std::string("hilbert"); },
                    },
                    k);
}

nlohmann::json to_json(const KernelSpec& k) {
  nlohmann::json j{{"kind", kernel_name(k)}};
  if (const auto* h = std::get_if<HilbertKernel>(&k)) j["d"] = h->d;
  return j;
}

KernelSpec kernel_from_json(const nlohmann::json& j, const std::string& path) {
  const std::string kind = j.is_string() ? j.get<std::string>()
                           : (j.is_object() && j.contains("kind") && j.at("kind").is_string())
                               ? j.at("kind").get<std::string>()
                               : throw FormatError(path + ": expected kernel name or {\"kind\": ...}");
  if (kind == "linear") return LinearKernel{};
  if (kind == "exponential") return ExponentialKernel{};
  if (kind == "hilbert") {
    if (!j.is_object() || !j.contains("d") || !j.at("d").is_number_integer())
      throw FormatError(path + ".d: hilbert kernel needs integer dimension");
    return HilbertKernel{j.at("d").get<int>()};
  }
  throw FormatError(path + ".kind: unknown kernel '" + kind + "'");
}

std::string mask_name(MaskMode m) {
  switch (m) {
    case MaskMode::None:
      return "none";
    case MaskMode::ExcludeSelf:
      return "exclude_self";
    case MaskMode::StrictCausal:
      return "strict_causal";
  }
  return "none";
}

MaskMode mask_from_string(const std::string& s) {
  if (s == "none") return MaskMode::None;
  if (s == "exclude_self") return MaskMode::ExcludeSelf;
  if (s == "strict_causal") return MaskMode::StrictCausal;
  throw FormatError("unknown mask mode '" + s + "'");
}

double hilbert_kernel(std::span<const double> x, std::span<const double> x2) {
  if (x.size() != x2.size()) throw DimensionError("hilbert_kernel: vectors of different length");
  const double r = distance(x, x2);
  if (r < kExactMatchDistance) return kExactMatch;
  return 1.0 / std::pow(r, static_cast<double>(x.size()));
}

double kernel_value(const KernelSpec& k, std::span<const double> x, std::span<const double> x2) {
  return std::visit(overloaded{
                        [&](const LinearKernel&) { return dot(x, x2); },
                        [&](const ExponentialKernel&) { return std::exp(dot(x, x2)); },
                        [&](const HilbertKernel&) { return hilbert_kernel(x, x2); },
                    },
                    k);
}

std::vector<double> smoother_weights(const KernelSpec& k, std::span<const double> query,
                                     std::span<const double> points, std::size_t dim,
                                     const std::vector<bool>& allowed, bool* degenerate) {
  const std::size_t n = allowed.size();
  if (points.size() != n * dim || query.size() != dim) throw DimensionError("smoother_weights: shape mismatch");
  if (degenerate) *degenerate = false;
  std::vector<double> w(n, 0.0);
  auto point = [&](std::size_t j) { return points.subspan(j * dim, dim); };
  std::size_t count = 0;
  for (std::size_t j = 0; j < n; ++j) count += allowed[j] ? 1 : 0;
  if (count == 0) return w;

  auto uniform = [&](auto&& pick) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j) m += pick(j) ? 1 : 0;
    for (std::size_t j = 0; j < n; ++j) w[j] = pick(j) ? 1.0 / static_cast<double>(m) : 0.0;
  };

  if (std::holds_alternative<LinearKernel>(k)) {
    double den = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!allowed[j]) continue;
      w[j] = dot(query, point(j));
      den += w[j];
    }
    if (std::abs(den) < kDegenerateDenominator) {
      if (degenerate) *degenerate = true;
      uniform([&](std::size_t j) { return allowed[j]; });
      return w;
    }
    for (double& v : w) v /= den;
    return w;
  }

  // Exponential and Hilbert weights are positive: normalize in the log domain.
  std::vector<double> logk(n, -std::numeric_limits<double>::infinity());
  if (const auto* h = std::get_if<HilbertKernel>(&k)) {
    std::vector<bool> exact(n, false);
    bool any_exact = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (!allowed[j]) continue;
      const double r = distance(query, point(j));
      if (r < kExactMatchDistance) {
        exact[j] = true;
        any_exact = true;
      } else {
        logk[j] = -static_cast<double>(h->d) * std::log(r);
      }
    }
    if (any_exact) {
      uniform([&](std::size_t j) { return static_cast<bool>(exact[j]); });
      return w;
    }
  } else {
    for (std::size_t j = 0; j < n; ++j)
      if (allowed[j]) logk[j] = dot(query, point(j));
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if (allowed[j]) mx = std::max(mx, logk[j]);
  double den = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!allowed[j]) continue;
    w[j] = std::exp(logk[j] - mx);
    den += w[j];
  }
  for (double& v : w) v /= den;
  return w;
}

nd::Tensor psi_L(const tasks::PromptMatrix& a) {
  if (!a.query_label_zeroed()) throw ContractError("psi_L: query label must be zeroed");
  const std::size_t n = a.rows();
  const std::size_t c = a.cols();
  std::vector<double> gram(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) gram[i * n + j] = dot(a.row(i), a.row(j));
  std::vector<double> out(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      auto rj = a.row(j);
      for (std::size_t k = 0; k < c; ++k) out[i * c + k] += gram[i * n + j] * rj[k];
    }
  return nd::Tensor({n, c}, std::move(out));
}

nd::Tensor khat(const nd::Tensor& x, const KernelSpec& k, MaskMode mask) {
  if (x.rank() != 2) throw DimensionError("khat: X must be a matrix, got " + nd::to_string(x.shape()));
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto w = smoother_weights(k, x.data().subspan(i * d, d), x.data(), d, allowed_for_row(i, n, mask));
    std::copy(w.begin(), w.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return nd::Tensor({n, n}, std::move(out));
}

nd::Tensor psi_K(const tasks::PromptMatrix& a, const KernelSpec& k, MaskMode mask) {
  if (!a.query_label_zeroed()) throw ContractError("psi_K: query label must be zeroed");
  const std::size_t n = a.rows();
  const std::size_t c = a.cols();
  const nd::Tensor weights = khat(a.features(), k, mask);
  std::vector<double> out(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double w = weights[i * n + j];
      if (w == 0.0) continue;
      auto rj = a.row(j);
      for (std::size_t q = 0; q < c; ++q) out[i * c + q] += w * rj[q];
    }
  return nd::Tensor({n, c}, std::move(out));
}

std::vector<double> psi_K_last_row(const tasks::PromptMatrix& a, const KernelSpec& k) {
  if (!a.query_label_zeroed()) throw ContractError("psi_K_last_row: query label must be zeroed");
  const std::size_t n = a.rows();
  const std::size_t d = a.dim();
  std::vector<double> points;
  points.reserve(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = a.x(i);
    points.insert(points.end(), xi.begin(), xi.end());
  }
  auto w = smoother_weights(k, a.query(), points, d, allowed_for_row(n - 1, n, MaskMode::ExcludeSelf));
  std::vector<double> out(d + 1, 0.0);
  for (std::size_t j = 0; j + 1 < n; ++j) {
    auto rj = a.row(j);
    for (std::size_t q = 0; q <= d; ++q) out[q] += w[j] * rj[q];
  }
  return out;
}

std::vector<double> psi_L_last_row(const tasks::PromptMatrix& a) {
  if (!a.query_label_zeroed()) throw ContractError("psi_L_last_row: query label must be zeroed");
  const std::size_t n = a.rows();
  auto q = a.row(n - 1);
  std::vector<double> out(a.cols(), 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    auto rj = a.row(j);
    const double g = dot(q, rj);
    for (std::size_t c = 0; c < rj.size(); ++c) out[c] += g * rj[c];
  }
  return out;
}

std::vector<double> last_row(const nd::Tensor& m) {
  if (m.rank() != 2) throw DimensionError("last_row: expected matrix, got " + nd::to_string(m.shape()));
  const std::size_t c = m.dim(1);
  auto d = m.data();
  return std::vector<double>(d.end() - static_cast<std::ptrdiff_t>(c), d.end());
}

double last_element(const nd::Tensor& m) {
  if (m.rank() != 2) throw DimensionError("last_element: expected matrix, got " + nd::to_string(m.shape()));
  return m.data().back();
}

}  // namespace icl::feat
