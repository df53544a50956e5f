#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "viact/tensor.hpp"

namespace viact {

// Elementwise binary ops. `b` must have the same shape as `a` or a suffix of
// it (broadcast over leading dims of `a`); no other broadcasting is supported.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

/// Batched matrix product a[..., m, p] x b[..., p, n] -> [..., m, n].
/// Batch extents must match, or one operand must be a plain matrix.
/// With `transpose_b`, b is laid out as [..., n, p].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// x[..., in] * weight[in, out] + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor permute(const Tensor& a, const std::vector<int>& order);
Tensor transpose(const Tensor& a, int axis0, int axis1);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t length);
/// Selects entries of `a` along `axis` at `index` (duplicates allowed).
Tensor index_select(const Tensor& a, int axis, std::span<const int64_t> index);
/// Per-batch row gather: a[B, M, C], index holds B*rows entries in [0, M).
Tensor gather_rows(const Tensor& a, std::span<const int64_t> index, int64_t rows);
/// Repeats `a` over new leading dims: result shape is leading ++ a.shape.
Tensor broadcast_leading(const Tensor& a, const Shape& leading);

Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);
/// Normalizes over the last axis, then applies gain and bias.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);
/// Exact GELU, x * Phi(x) with the Gaussian CDF via erf.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Mean binary cross-entropy of logits against {0,1} targets of the same shape.
/// Gradients flow to the logits only.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
/// Mean squared error over all elements.
Tensor mse(const Tensor& prediction, const Tensor& target);

}  // namespace viact
