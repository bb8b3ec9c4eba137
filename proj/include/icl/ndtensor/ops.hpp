#pragma once

#include <cstddef>
#include <optional>

#include "icl/ndtensor/tape.hpp"

// Differentiable operations on tape variables. Shapes must match exactly;
// the only broadcasting is tensor-with-scalar (scale, add_scalar) and the
// explicit bias/normalization ops that take a per-feature vector.
namespace icl::nd {

// [m,k] x [k,n] -> [m,n]
Var matmul(const Var& a, const Var& b);
// [B,m,k] x [B,k,n] -> [B,m,n]
Var batched_matmul(const Var& a, const Var& b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// a[..., n] + bias[n] on every row.
Var add_bias(const Var& a, const Var& bias);

inline constexpr double kL1NormEpsilon = 1e-12;

// Rows are the last axis: v -> v / max(sum|v_j|, 1e-12).
Var row_l1_normalize(const Var& a);
// Row-wise softmax over the last axis. `mask` (same shape, nonzero = allowed)
// excludes entries; a row with no allowed entry becomes all-zero.
Var row_softmax(const Var& a, const std::optional<Tensor>& mask = std::nullopt);
// Layer normalization over the last axis with per-feature gain and bias.
Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5);

// Exact x * Phi(x).
Var gelu(const Var& a);
// max(0, x) with derivative 0 at x == 0.
Var relu(const Var& a);

// Concatenation along the last axis; leading axes must agree.
Var concat_last(const Var& a, const Var& b);
// Concatenation of two matrices along rows.
Var concat_rows(const Var& a, const Var& b);
// Row `i` along the second-to-last axis: [n,k] -> [k], [B,n,k] -> [B,k].
Var select_row(const Var& a, std::size_t i);
// Columns [start, start+len) of the last axis.
Var slice_last(const Var& a, std::size_t start, std::size_t len);

Var sum(const Var& a);
Var mean(const Var& a);
// mean((pred - target)^2); target is data, not differentiated.
Var squared_error(const Var& pred, const Tensor& target);

}  // namespace icl::nd
