#pragma once

#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "icl/ndtensor/tensor.hpp"
#include "icl/taskgen/prompt.hpp"

namespace icl::feat {

// K(x, x') = x^T x'
struct LinearKernel {};
// K(x, x') = exp(x^T x')
struct ExponentialKernel {};
// K(x, x') = 1 / ||x - x'||^d
struct HilbertKernel {
  int d = 1;
};

using KernelSpec = std::variant<LinearKernel, ExponentialKernel, HilbertKernel>;

std::string kernel_name(const KernelSpec& k);
nlohmann::json to_json(const KernelSpec& k);
KernelSpec kernel_from_json(const nlohmann::json& j, const std::string& path = "kernel");

enum class MaskMode {
  None,          // every pair allowed
  ExcludeSelf,   // diagonal removed
  StrictCausal,  // only j < i
};

std::string mask_name(MaskMode m);
MaskMode mask_from_string(const std::string& s);

// Returned by hilbert_kernel for points closer than kExactMatchDistance.
inline constexpr double kExactMatch = std::numeric_limits<double>::infinity();
inline constexpr double kExactMatchDistance = 1e-12;
inline bool is_exact_match(double k) { return k == kExactMatch; }

// 1 / ||x - x2||_2^d with d = x.size(); kExactMatch on (near-)coincidence.
double hilbert_kernel(std::span<const double> x, std::span<const double> x2);
double kernel_value(const KernelSpec& k, std::span<const double> x, std::span<const double> x2);

// Smoother weights of `query` over `points` (rows of a row-major n x d block),
// restricted to `allowed`. Weights sum to one; exact Hilbert matches share
// all the mass; an empty or degenerate allowed set yields all-zero weights
// (`degenerate` is set in the latter case).
std::vector<double> smoother_weights(const KernelSpec& k, std::span<const double> query,
                                     std::span<const double> points, std::size_t dim,
                                     const std::vector<bool>& allowed, bool* degenerate = nullptr);

// (A A^T) A.
nd::Tensor psi_L(const tasks::PromptMatrix& a);

// Row-normalized kernel matrix over the rows of X (N x d) under `mask`.
nd::Tensor khat(const nd::Tensor& x, const KernelSpec& k, MaskMode mask = MaskMode::ExcludeSelf);

// khat(X) A.
nd::Tensor psi_K(const tasks::PromptMatrix& a, const KernelSpec& k, MaskMode mask = MaskMode::ExcludeSelf);

// Last row of psi_K without forming the N x N matrix; O(N d).
std::vector<double> psi_K_last_row(const tasks::PromptMatrix& a, const KernelSpec& k);
// Last row of psi_L in O(N d).
std::vector<double> psi_L_last_row(const tasks::PromptMatrix& a);

std::vector<double> last_row(const nd::Tensor& m);
double last_element(const nd::Tensor& m);

}  // namespace icl::feat
