#pragma once

#include <span>

#include "slad/tensor.hpp"

namespace slad {

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor gelu(const Tensor& x);

/// x[..., suffix] + bias[suffix]; bias broadcasts over the leading axes and
/// its gradient sums over them. bias may be any trailing sub-shape of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// b 2-d: contracts the last axis of a against b[k,n] (the linear-layer case).
/// Both >2-d with equal batch prefixes: batched matrix product over the last
/// two axes. Backward skips dA or dB for inputs that do not require grad.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Batched a[...,m,k] * b[...,n,k]^T; contracts rows against rows.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor transpose(const Tensor& x);  // swaps the last two axes

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Contiguous [begin, end) slab along `axis`. Gradients scatter back into the
/// parent at the sliced offsets.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);

Tensor sum(const Tensor& x);   // scalar, fixed left-to-right order
Tensor mean(const Tensor& x);  // scalar

/// Embedding-style row gather: table[V, d] indexed by ids -> [len(ids), d].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);

/// Rows over the last axis sum to 1; computed with max subtraction. T > 0.
Tensor softmax_temperature(const Tensor& logits, double temperature);
Tensor log_softmax(const Tensor& logits);  // last axis, max-subtracted

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-6);

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace slad
