#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lpt/numerics/autograd.hpp"

// Differentiable tensor operations. Every op returns a new Var and records a
// backward function when any input requires a gradient.
namespace lpt::ad {

// Elementwise arithmetic with NumPy-style broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Scalar factor);
Var add_scalar(const Var& a, Scalar value);
Var square(const Var& a);

// Reductions.
Var sum(const Var& a);        // -> rank 0
Var mean(const Var& a);       // -> rank 0
Var sum_last(const Var& a);   // drops the last axis

// Layout.
Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<std::size_t>& perm);
Var concat_last(const Var& a, const Var& b);

// Linear algebra.
/// x[..., K] @ w[K, N] -> [..., N]
Var matmul(const Var& x, const Var& w);
/// x[..., K] @ w[K, N] + b[N]
Var linear(const Var& x, const Var& w, const Var& b);
/// Batched product a[B, M, K] @ b[B, K, N], or a @ b^T with b[B, N, K].
Var bmm(const Var& a, const Var& b, bool transpose_b = false);

// Nonlinearities and normalisation over the last axis.
Var gelu(const Var& a);
/// Softmax over the last axis. With `causal`, a [..., T, S] input has entries
/// with column > row masked to probability zero.
Var softmax_last(const Var& a, bool causal = false);
Var log_softmax_last(const Var& a);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, Scalar eps = 1e-5);

// Lookup.
/// Rows of table[V, E] selected by ids -> [ids.size(), E].
Var embedding(const Var& table, std::span<const std::int32_t> ids);
/// out[r] = a[r, index[r]] over the last axis; negative index yields 0.
Var pick_last(const Var& a, std::span<const std::int32_t> index);

// 1-D convolutions on channels-last signals x[B, L, C_in] with w[K, C_in, C_out].
Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t padding);
/// Adjoint of conv1d; `out_len` picks among the lengths compatible with the stride.
Var conv_transpose1d(const Var& x, const Var& w, const Var& b, std::size_t stride,
                     std::size_t padding, std::size_t out_len);

// Losses and densities.
/// Mean negative log-likelihood of `targets` under softmax(logits[N, V]).
Var cross_entropy(const Var& logits, std::span<const std::int32_t> targets);
/// Elementwise log N(y; mean, variance[j]) where j cycles over the last axis.
Var gaussian_log_density(const Var& y, const Var& mean, std::span<const double> variance);
/// log N(z; 0, I) summed over the last axis.
Var std_normal_log_density(const Var& z);

}  // namespace lpt::ad
