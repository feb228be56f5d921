#pragma once

#include <vector>

#include "seam/rng.hpp"
#include "seam/tensor.hpp"

namespace seam::ops {

/// [m,k] x [k,n] -> [m,n]. Backward: dA = dC.B^T, dB = A^T.dC.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation (no kernel flip). x: [N,C,H,W], w: [F,C,kh,kw],
/// bias: [F] (may be undefined for bias-free layers). Output extents
/// H' = floor((H + 2p - kh)/stride) + 1, likewise W'.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding);

/// Dense layer y = x.w^T + bias with weight stored [out,in]; avoids a
/// transpose node per forward. bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor relu(const Tensor& x);

/// Window max over [N,C,H,W]; backward routes each gradient to the argmax
/// position only (first occurrence on ties).
Tensor maxpool2d(const Tensor& x, int k, int stride);

/// Training mode zeroes each element with probability p and scales
/// survivors by 1/(1-p); eval mode returns x unchanged (same handle).
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

/// [N, d1, d2, ...] -> [N, d1*d2*...].
Tensor flatten(const Tensor& x);

/// Elementwise sum. Shapes must match, except b may be a vector of length
/// equal to a's last extent (row broadcast, used for biases).
Tensor add(const Tensor& a, const Tensor& b);

/// Elementwise (Hadamard) product, same shapes.
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double c);

/// Sum of all elements -> scalar (shape {1}).
Tensor sum(const Tensor& x);

/// Column gather: x [B,K] with index list -> [B, idx.size()].
Tensor gather_cols(const Tensor& x, const std::vector<std::int64_t>& idx);

/// Mean over the batch of -sum_i t_i log softmax(z)_i, max-stabilized.
/// logits [B,K], labels one-hot [B,K] (validated). Backward:
/// (softmax - t) / B. Always >= 0.
Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& onehot_labels);

/// Column-grouped log-sum-exp over [B,N] logits: out[b][g] =
/// log sum_{i in groups[g]} exp(z[b][i]), max-stabilized. A singleton group
/// copies its column bitwise. Restricts an N-way classifier onto grouped
/// labels with exact gradients.
Tensor group_logsumexp(const Tensor& z, const std::vector<std::vector<std::int64_t>>& groups);

/// Row softmax of [B,K]; forward-only convenience (no backward rule).
std::vector<double> softmax_rows(const Tensor& logits);

/// Row argmax of [B,K].
std::vector<std::int64_t> argmax_rows(const Tensor& logits);

/// One-hot encode labels into [B,K] of the given dtype.
Tensor one_hot(const std::vector<int>& labels, std::int64_t k, DType dt = DType::f32);

} // namespace seam::ops
