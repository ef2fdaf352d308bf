#include "lpt/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "lpt/errors.hpp"

namespace lpt::ad {
namespace {

// ---------------------------------------------------------------------------
// Dense kernels. Every output element is accumulated in ascending-k order no
// matter how many rows are processed together, so a row's result does not
// depend on the batch it happens to sit in.

// C[M,N] += A[M,K] * B[K,N]
void gemm_acc(std::size_t M, std::size_t K, std::size_t N, const Scalar* A, const Scalar* B,
              Scalar* C) {
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    Scalar* c0 = C + i * N;
    Scalar* c1 = c0 + N;
    Scalar* c2 = c1 + N;
    Scalar* c3 = c2 + N;
    const Scalar* a0 = A + i * K;
    const Scalar* a1 = a0 + K;
    const Scalar* a2 = a1 + K;
    const Scalar* a3 = a2 + K;
    for (std::size_t k = 0; k < K; ++k) {
      const Scalar* b = B + k * N;
      const Scalar v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
      for (std::size_t j = 0; j < N; ++j) {
        const Scalar bj = b[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < M; ++i) {
    Scalar* c = C + i * N;
    const Scalar* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const Scalar* b = B + k * N;
      const Scalar v = a[k];
      for (std::size_t j = 0; j < N; ++j) c[j] += v * b[j];
    }
  }
}

// out[N,M] = in[M,N]^T
void transpose_into(std::size_t M, std::size_t N, const Scalar* in, Scalar* out) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) out[j * M + i] = in[i * N + j];
}

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt_acc(std::size_t M, std::size_t K, std::size_t N, const Scalar* A, const Scalar* B,
                 Scalar* C, std::vector<Scalar>& scratch) {
  scratch.resize(K * N);
  transpose_into(N, K, B, scratch.data());
  gemm_acc(M, K, N, A, scratch.data(), C);
}

// C[K,N] += A[M,K]^T * B[M,N]
void gemm_tn_acc(std::size_t M, std::size_t K, std::size_t N, const Scalar* A, const Scalar* B,
                 Scalar* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const Scalar* a = A + i * K;
    const Scalar* b = B + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const Scalar v = a[k];
      Scalar* c = C + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += v * b[j];
    }
  }
}

std::size_t last_dim(const Var& v, const char* op) {
  if (v.shape().empty()) throw ShapeError(std::string(op) + ": rank-0 input");
  return v.shape().back();
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

// ---------------------------------------------------------------------------
// Broadcasting

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// `small` (without leading 1s) equals the trailing extents of `out`.
bool is_suffix(const Shape& small, const Shape& out) {
  std::size_t lead = 0;
  while (lead < small.size() && small[lead] == 1) ++lead;
  const std::size_t n = small.size() - lead;
  if (n > out.size()) return false;
  return std::equal(small.begin() + lead, small.end(), out.end() - n);
}

std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    const std::size_t o = i + (out.size() - in.size());
    strides[o] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

template <class F>
void broadcast_each(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const std::size_t n = shape_numel(out);
  const std::size_t na = shape_numel(a), nb = shape_numel(b);
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
  } else if (na == n && is_suffix(b, out)) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i % nb);
  } else if (nb == n && is_suffix(a, out)) {
    for (std::size_t i = 0; i < n; ++i) f(i, i % na, i);
  } else {
    const auto sa = aligned_strides(a, out);
    const auto sb = aligned_strides(b, out);
    std::vector<std::size_t> idx(out.size(), 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
      f(i, ia, ib);
      for (std::size_t d = out.size(); d-- > 0;) {
        ++idx[d];
        ia += sa[d];
        ib += sb[d];
        if (idx[d] < out[d]) break;
        ia -= sa[d] * out[d];
        ib -= sb[d] * out[d];
        idx[d] = 0;
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), "add");
  Tensor out(out_shape);
  auto o = out.mutable_data();
  auto av = a.value().data(), bv = b.value().data();
  broadcast_each(out_shape, a.shape(), b.shape(),
                 [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = av[ia] + bv[ib]; });
  Shape sa = a.shape(), sb = b.shape();
  return make_result(
      std::move(out), {a, b},
      [out_shape, sa, sb](std::span<const Scalar> g, GradAccess& grads) {
        const bool wa = grads.wants(0), wb = grads.wants(1);
        std::span<Scalar> ga = wa ? grads.at(0) : std::span<Scalar>{};
        std::span<Scalar> gb = wb ? grads.at(1) : std::span<Scalar>{};
        broadcast_each(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          if (wa) ga[ia] += g[i];
          if (wb) gb[ib] += g[i];
        });
      },
      "add");
}

Var sub(const Var& a, const Var& b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), "sub");
  Tensor out(out_shape);
  auto o = out.mutable_data();
  auto av = a.value().data(), bv = b.value().data();
  broadcast_each(out_shape, a.shape(), b.shape(),
                 [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = av[ia] - bv[ib]; });
  Shape sa = a.shape(), sb = b.shape();
  return make_result(
      std::move(out), {a, b},
      [out_shape, sa, sb](std::span<const Scalar> g, GradAccess& grads) {
        const bool wa = grads.wants(0), wb = grads.wants(1);
        std::span<Scalar> ga = wa ? grads.at(0) : std::span<Scalar>{};
        std::span<Scalar> gb = wb ? grads.at(1) : std::span<Scalar>{};
        broadcast_each(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          if (wa) ga[ia] += g[i];
          if (wb) gb[ib] -= g[i];
        });
      },
      "sub");
}

Var mul(const Var& a, const Var& b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), "mul");
  Tensor out(out_shape);
  auto o = out.mutable_data();
  auto av = a.value().data(), bv = b.value().data();
  broadcast_each(out_shape, a.shape(), b.shape(),
                 [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = av[ia] * bv[ib]; });
  Tensor at = a.value(), bt = b.value();
  return make_result(
      std::move(out), {a, b},
      [out_shape, at, bt](std::span<const Scalar> g, GradAccess& grads) {
        const bool wa = grads.wants(0), wb = grads.wants(1);
        std::span<Scalar> ga = wa ? grads.at(0) : std::span<Scalar>{};
        std::span<Scalar> gb = wb ? grads.at(1) : std::span<Scalar>{};
        auto av = at.data(), bv = bt.data();
        broadcast_each(out_shape, at.shape(), bt.shape(),
                       [&](std::size_t i, std::size_t ia, std::size_t ib) {
                         if (wa) ga[ia] += g[i] * bv[ib];
                         if (wb) gb[ib] += g[i] * av[ia];
                       });
      },
      "mul");
}

Var scale(const Var& a, Scalar factor) {
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto av = a.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * factor;
  return make_result(
      std::move(out), {a},
      [factor](std::span<const Scalar> g, GradAccess& grads) {
        auto ga = grads.at(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
      },
      "scale");
}

Var add_scalar(const Var& a, Scalar value) {
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto av = a.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + value;
  return make_result(
      std::move(out), {a},
      [](std::span<const Scalar> g, GradAccess& grads) {
        auto ga = grads.at(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      },
      "add_scalar");
}

Var square(const Var& a) {
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto av = a.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * av[i];
  Tensor at = a.value();
  return make_result(
      std::move(out), {a},
      [at](std::span<const Scalar> g, GradAccess& grads) {
        auto ga = grads.at(0);
        auto av = at.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2 * av[i] * g[i];
      },
      "square");
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& a) {
  Scalar total = 0;
  for (Scalar v : a.value().data()) total += v;
  return make_result(
      Tensor::scalar(total), {a},
      [](std::span<const Scalar> g, GradAccess& grads) {
        auto ga = grads.at(0);
        for (auto& v : ga) v += g[0];
      },
      "sum");
}

Var mean(const Var& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.numel()));
}

Var sum_last(const Var& a) {
  const std::size_t D = last_dim(a, "sum_last");
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  Tensor out(out_shape);
  auto o = out.mutable_data();
  auto av = a.value().data();
  for (std::size_t r = 0; r < o.size(); ++r) {
    Scalar s = 0;
    for (std::size_t j = 0; j < D; ++j) s += av[r * D + j];
    o[r] = s;
  }
  return make_result(
      std::move(out), {a},
      [D](std::span<const Scalar> g, GradAccess& grads) {
        auto ga = grads.at(0);
        for (std::size_t r = 0; r < g.size(); ++r)
          for (std::size_t j = 0; j < D; ++j) ga[r * D + j] += g[r];
      },
      "sum_last");
}

// ---------------------------------------------------------------------------
// Layout

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_result(
      std::move(out), {a},
      [](std::span<const Scalar> g, GradAccess& grads) {
        auto ga = grads.at(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      },
      "reshape");
}

Var permute(const Var& a, const std::vector<std::size_t>& perm) {
  const Shape& in = a.shape();
  require(perm.size() == in.size(), "permute: rank mismatch");
  std::vector<bool> seen(perm.size(), false);
  for (auto p : perm) {
    require(p < perm.size() && !seen[p], "permute: invalid permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> in_strides(in.size(), 1);
  for (std::size_t i = in.size(); i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  Shape out_shape(in.size());
  std::vector<std::size_t> strides(in.size());
  for (std::size_t d = 0; d < in.size(); ++d) {
    out_shape[d] = in[perm[d]];
    strides[d] = in_strides[perm[d]];
  }
  // offsets[i] = source offset of output element i
  const std::size_t n = a.numel();
  auto offsets = std::make_shared<std::vector<std::size_t>>(n);
  {
    std::vector<std::size_t> idx(in.size(), 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
      (*offsets)[i] = off;
      for (std::size_t d = out_shape.size(); d-- > 0;) {
        ++idx[d];
        off += strides[d];
        if (idx[d] < out_shape[d]) break;
        off -= strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  Tensor out(out_shape);
  auto o = out.mutable_data();
  auto av = a.value().data();
  for (std::size_t i = 0; i < n; ++i) o[i] = av[(*offsets)[i]];
  return make_result(
      std::move(out), {a},
      [offsets](std::span<const Scalar> g, GradAccess& grads) {
        auto ga = grads.at(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[(*offsets)[i]] += g[i];
      },
      "permute");
}

Var concat_last(const Var& a, const Var& b) {
  const std::size_t Da = last_dim(a, "concat_last"), Db = last_dim(b, "concat_last");
  require(a.shape().size() == b.shape().size() &&
              std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin()),
          "concat_last: leading shapes differ " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  Shape out_shape = a.shape();
  out_shape.back() = Da + Db;
  const std::size_t rows = Da ? a.numel() / Da : b.numel() / Db;
  Tensor out(out_shape);
  auto o = out.mutable_data();
  auto av = a.value().data(), bv = b.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + r * Da, Da, o.begin() + r * (Da + Db));
    std::copy_n(bv.begin() + r * Db, Db, o.begin() + r * (Da + Db) + Da);
  }
  return make_result(
      std::move(out), {a, b},
      [rows, Da, Db](std::span<const Scalar> g, GradAccess& grads) {
        if (grads.wants(0)) {
          auto ga = grads.at(0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < Da; ++j) ga[r * Da + j] += g[r * (Da + Db) + j];
        }
        if (grads.wants(1)) {
          auto gb = grads.at(1);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < Db; ++j) gb[r * Db + j] += g[r * (Da + Db) + Da + j];
        }
      },
      "concat_last");
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& x, const Var& w) {
  require(w.shape().size() == 2, "matmul: weight must be rank 2, got " + shape_str(w.shape()));
  const std::size_t K = last_dim(x, "matmul");
  const std::size_t N = w.shape()[1];
  require(w.shape()[0] == K, "matmul: inner dimensions differ " + shape_str(x.shape()) + " @ " +
                                 shape_str(w.shape()));
  const std::size_t M = x.numel() / K;
  Shape out_shape = x.shape();
  out_shape.back() = N;
  Tensor out(out_shape);
  gemm_acc(M, K, N, x.value().data().data(), w.value().data().data(),
           out.mutable_data().data());
  Tensor xt = x.value(), wt = w.value();
  return make_result(
      std::move(out), {x, w},
      [xt, wt, M, K, N](std::span<const Scalar> g, GradAccess& grads) {
        if (grads.wants(0)) {
          std::vector<Scalar> scratch;
          gemm_nt_acc(M, N, K, g.data(), wt.data().data(), grads.at(0).data(), scratch);
        }
        if (grads.wants(1)) gemm_tn_acc(M, K, N, xt.data().data(), g.data(), grads.at(1).data());
      },
      "matmul");
}

Var linear(const Var& x, const Var& w, const Var& b) { return add(matmul(x, w), b); }

Var bmm(const Var& a, const Var& b, bool transpose_b) {
  require(a.shape().size() == 3 && b.shape().size() == 3, "bmm: inputs must be rank 3");
  const std::size_t B = a.shape()[0], M = a.shape()[1], K = a.shape()[2];
  require(b.shape()[0] == B, "bmm: batch mismatch");
  const std::size_t N = transpose_b ? b.shape()[1] : b.shape()[2];
  require((transpose_b ? b.shape()[2] : b.shape()[1]) == K,
          "bmm: inner dimensions differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out(Shape{B, M, N});
  {
    auto o = out.mutable_data();
    auto av = a.value().data(), bv = b.value().data();
    std::vector<Scalar> scratch;
    for (std::size_t i = 0; i < B; ++i) {
      const Scalar* ai = av.data() + i * M * K;
      const Scalar* bi = bv.data() + i * K * N;
      Scalar* oi = o.data() + i * M * N;
      if (transpose_b) {
        gemm_nt_acc(M, K, N, ai, bi, oi, scratch);
      } else {
        gemm_acc(M, K, N, ai, bi, oi);
      }
    }
  }
  Tensor at = a.value(), bt = b.value();
  return make_result(
      std::move(out), {a, b},
      [at, bt, B, M, K, N, transpose_b](std::span<const Scalar> g, GradAccess& grads) {
        auto av = at.data(), bv = bt.data();
        std::vector<Scalar> scratch;
        if (grads.wants(0)) {
          auto ga = grads.at(0);
          for (std::size_t i = 0; i < B; ++i) {
            const Scalar* gi = g.data() + i * M * N;
            const Scalar* bi = bv.data() + i * K * N;
            Scalar* dai = ga.data() + i * M * K;
            if (transpose_b) {
              gemm_acc(M, N, K, gi, bi, dai);  // dA = G B, with B stored [N, K]
            } else {
              gemm_nt_acc(M, N, K, gi, bi, dai, scratch);  // dA = G B^T
            }
          }
        }
        if (grads.wants(1)) {
          auto gb = grads.at(1);
          for (std::size_t i = 0; i < B; ++i) {
            const Scalar* gi = g.data() + i * M * N;
            const Scalar* ai = av.data() + i * M * K;
            Scalar* dbi = gb.data() + i * K * N;
            if (transpose_b) {
              gemm_tn_acc(M, N, K, gi, ai, dbi);  // dB[N,K] = G^T A
            } else {
              gemm_tn_acc(M, K, N, ai, gi, dbi);  // dB[K,N] = A^T G
            }
          }
        }
      },
      "bmm");
}

// ---------------------------------------------------------------------------
// Nonlinearities

Var gelu(const Var& a) {
  constexpr Scalar kInvSqrt2 = Scalar(0.70710678118654752440);
  constexpr Scalar kInvSqrt2Pi = Scalar(0.39894228040143267794);
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto av = a.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = Scalar(0.5) * av[i] * (1 + std::erf(av[i] * kInvSqrt2));
  }
  Tensor at = a.value();
  return make_result(
      std::move(out), {a},
      [at](std::span<const Scalar> g, GradAccess& grads) {
        auto ga = grads.at(0);
        auto av = at.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const Scalar x = av[i];
          const Scalar cdf = Scalar(0.5) * (1 + std::erf(x * kInvSqrt2));
          const Scalar pdf = kInvSqrt2Pi * std::exp(Scalar(-0.5) * x * x);
          ga[i] += g[i] * (cdf + x * pdf);
        }
      },
      "gelu");
}

Var softmax_last(const Var& a, bool causal) {
  const std::size_t S = last_dim(a, "softmax_last");
  std::size_t T = 1;
  if (causal) {
    require(a.shape().size() >= 2, "softmax_last: causal mask needs rank >= 2");
    T = a.shape()[a.shape().size() - 2];
    require(S >= T, "softmax_last: causal mask needs at least as many columns as rows");
  }
  const std::size_t rows = a.numel() / S;
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto av = a.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t allowed = causal ? (r % T) + (S - T) + 1 : S;
    const Scalar* x = av.data() + r * S;
    Scalar* y = o.data() + r * S;
    Scalar mx = x[0];
    for (std::size_t j = 1; j < allowed; ++j) mx = std::max(mx, x[j]);
    Scalar z = 0;
    for (std::size_t j = 0; j < allowed; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < allowed; ++j) y[j] /= z;
    for (std::size_t j = allowed; j < S; ++j) y[j] = 0;
  }
  Tensor probs = out;
  return make_result(
      std::move(out), {a},
      [probs, rows, S](std::span<const Scalar> g, GradAccess& grads) {
        auto ga = grads.at(0);
        auto p = probs.data();
        for (std::size_t r = 0; r < rows; ++r) {
          Scalar dot = 0;
          for (std::size_t j = 0; j < S; ++j) dot += p[r * S + j] * g[r * S + j];
          for (std::size_t j = 0; j < S; ++j)
            ga[r * S + j] += p[r * S + j] * (g[r * S + j] - dot);
        }
      },
      "softmax_last");
}

Var log_softmax_last(const Var& a) {
  const std::size_t S = last_dim(a, "log_softmax_last");
  const std::size_t rows = a.numel() / S;
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto av = a.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* x = av.data() + r * S;
    Scalar mx = x[0];
    for (std::size_t j = 1; j < S; ++j) mx = std::max(mx, x[j]);
    Scalar z = 0;
    for (std::size_t j = 0; j < S; ++j) z += std::exp(x[j] - mx);
    const Scalar lse = mx + std::log(z);
    for (std::size_t j = 0; j < S; ++j) o[r * S + j] = x[j] - lse;
  }
  Tensor logp = out;
  return make_result(
      std::move(out), {a},
      [logp, rows, S](std::span<const Scalar> g, GradAccess& grads) {
        auto ga = grads.at(0);
        auto lp = logp.data();
        for (std::size_t r = 0; r < rows; ++r) {
          Scalar gs = 0;
          for (std::size_t j = 0; j < S; ++j) gs += g[r * S + j];
          for (std::size_t j = 0; j < S; ++j)
            ga[r * S + j] += g[r * S + j] - std::exp(lp[r * S + j]) * gs;
        }
      },
      "log_softmax_last");
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, Scalar eps) {
  const std::size_t D = last_dim(x, "layer_norm");
  require(gain.shape() == Shape{D} && bias.shape() == Shape{D},
          "layer_norm: gain/bias must have shape [" + std::to_string(D) + "]");
  const std::size_t rows = x.numel() / D;
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  Tensor inv_std(Shape{rows});
  {
    auto o = out.mutable_data();
    auto xh = xhat.mutable_data();
    auto is = inv_std.mutable_data();
    auto xv = x.value().data(), gv = gain.value().data(), bv = bias.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
      const Scalar* xr = xv.data() + r * D;
      Scalar mu = 0;
      for (std::size_t j = 0; j < D; ++j) mu += xr[j];
      mu /= static_cast<Scalar>(D);
      Scalar var = 0;
      for (std::size_t j = 0; j < D; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= static_cast<Scalar>(D);
      const Scalar inv = 1 / std::sqrt(var + eps);
      is[r] = inv;
      for (std::size_t j = 0; j < D; ++j) {
        xh[r * D + j] = (xr[j] - mu) * inv;
        o[r * D + j] = xh[r * D + j] * gv[j] + bv[j];
      }
    }
  }
  Tensor gt = gain.value();
  return make_result(
      std::move(out), {x, gain, bias},
      [xhat, inv_std, gt, rows, D](std::span<const Scalar> g, GradAccess& grads) {
        auto xh = xhat.data();
        auto is = inv_std.data();
        auto gv = gt.data();
        if (grads.wants(1)) {
          auto gg = grads.at(1);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < D; ++j) gg[j] += g[r * D + j] * xh[r * D + j];
        }
        if (grads.wants(2)) {
          auto gb = grads.at(2);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < D; ++j) gb[j] += g[r * D + j];
        }
        if (grads.wants(0)) {
          auto gx = grads.at(0);
          const Scalar invD = Scalar(1) / static_cast<Scalar>(D);
          for (std::size_t r = 0; r < rows; ++r) {
            Scalar m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < D; ++j) {
              const Scalar dxh = g[r * D + j] * gv[j];
              m1 += dxh;
              m2 += dxh * xh[r * D + j];
            }
            m1 *= invD;
            m2 *= invD;
            for (std::size_t j = 0; j < D; ++j) {
              const Scalar dxh = g[r * D + j] * gv[j];
              gx[r * D + j] += is[r] * (dxh - m1 - xh[r * D + j] * m2);
            }
          }
        }
      },
      "layer_norm");
}

// ---------------------------------------------------------------------------
// Lookup

Var embedding(const Var& table, std::span<const std::int32_t> ids) {
  require(table.shape().size() == 2, "embedding: table must be rank 2");
  const std::size_t V = table.shape()[0], E = table.shape()[1];
  auto id_copy = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
  Tensor out(Shape{ids.size(), E});
  auto o = out.mutable_data();
  auto tv = table.value().data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= V) {
      throw ShapeError("embedding: id " + std::to_string(ids[r]) + " out of range [0, " +
                       std::to_string(V) + ")");
    }
    std::copy_n(tv.begin() + ids[r] * E, E, o.begin() + r * E);
  }
  return make_result(
      std::move(out), {table},
      [id_copy, E](std::span<const Scalar> g, GradAccess& grads) {
        auto gt = grads.at(0);
        for (std::size_t r = 0; r < id_copy->size(); ++r)
          for (std::size_t j = 0; j < E; ++j) gt[(*id_copy)[r] * E + j] += g[r * E + j];
      },
      "embedding");
}

Var pick_last(const Var& a, std::span<const std::int32_t> index) {
  const std::size_t V = last_dim(a, "pick_last");
  const std::size_t rows = a.numel() / V;
  require(index.size() == rows, "pick_last: need one index per row");
  auto idx = std::make_shared<std::vector<std::int32_t>>(index.begin(), index.end());
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  Tensor out(out_shape);
  auto o = out.mutable_data();
  auto av = a.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto k = index[r];
    if (k >= 0 && static_cast<std::size_t>(k) >= V) {
      throw ShapeError("pick_last: index " + std::to_string(k) + " out of range");
    }
    o[r] = k < 0 ? Scalar(0) : av[r * V + k];
  }
  return make_result(
      std::move(out), {a},
      [idx, V](std::span<const Scalar> g, GradAccess& grads) {
        auto ga = grads.at(0);
        for (std::size_t r = 0; r < idx->size(); ++r)
          if ((*idx)[r] >= 0) ga[r * V + (*idx)[r]] += g[r];
      },
      "pick_last");
}

// ---------------------------------------------------------------------------
// Convolutions

namespace {

struct ConvDims {
  std::size_t B, L_in, C_in, K, C_out, L_out, stride, padding;
};

ConvDims conv_dims(const Var& x, const Var& w, const Var& b, const char* op) {
  require(x.shape().size() == 3, std::string(op) + ": input must be [B, L, C]");
  require(w.shape().size() == 3, std::string(op) + ": weight must be [K, C_in, C_out]");
  ConvDims d{};
  d.B = x.shape()[0];
  d.L_in = x.shape()[1];
  d.C_in = x.shape()[2];
  d.K = w.shape()[0];
  d.C_out = w.shape()[2];
  require(w.shape()[1] == d.C_in, std::string(op) + ": channel mismatch " + shape_str(x.shape()) +
                                      " vs " + shape_str(w.shape()));
  require(b.shape() == Shape{d.C_out}, std::string(op) + ": bias shape mismatch");
  return d;
}

// Calls f(l_out_pos, l_in_pos, tap) for every (output, input, tap) triple that
// the strided convolution couples.
template <class F>
void conv_taps(const ConvDims& d, std::size_t l_long, F&& f) {
  for (std::size_t l = 0; l < l_long; ++l) {
    for (std::size_t t = 0; t < d.K; ++t) {
      const long src = static_cast<long>(l * d.stride + t) - static_cast<long>(d.padding);
      f(l, src, t);
    }
  }
}

// Per-tap transpose: [K, C_in, C_out] -> [K, C_out, C_in].
std::vector<Scalar> transposed_taps(const ConvDims& d, std::span<const Scalar> w) {
  std::vector<Scalar> out(w.size());
  for (std::size_t t = 0; t < d.K; ++t)
    transpose_into(d.C_in, d.C_out, w.data() + t * d.C_in * d.C_out,
                   out.data() + t * d.C_in * d.C_out);
  return out;
}

}  // namespace

Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t padding) {
  ConvDims d = conv_dims(x, w, b, "conv1d");
  require(stride >= 1, "conv1d: stride must be >= 1");
  require(d.L_in + 2 * padding >= d.K, "conv1d: input shorter than kernel");
  d.stride = stride;
  d.padding = padding;
  d.L_out = (d.L_in + 2 * padding - d.K) / stride + 1;
  Tensor out(Shape{d.B, d.L_out, d.C_out});
  {
    auto o = out.mutable_data();
    auto xv = x.value().data(), wv = w.value().data(), bv = b.value().data();
    for (std::size_t n = 0; n < d.B; ++n) {
      for (std::size_t l = 0; l < d.L_out; ++l) {
        Scalar* orow = o.data() + (n * d.L_out + l) * d.C_out;
        std::copy_n(bv.begin(), d.C_out, orow);
      }
      conv_taps(d, d.L_out, [&](std::size_t l, long src, std::size_t t) {
        if (src < 0 || src >= static_cast<long>(d.L_in)) return;
        gemm_acc(1, d.C_in, d.C_out, xv.data() + (n * d.L_in + src) * d.C_in,
                 wv.data() + t * d.C_in * d.C_out, o.data() + (n * d.L_out + l) * d.C_out);
      });
    }
  }
  Tensor xt = x.value(), wt = w.value();
  return make_result(
      std::move(out), {x, w, b},
      [xt, wt, d](std::span<const Scalar> g, GradAccess& grads) {
        auto xv = xt.data(), wv = wt.data();
        const bool wx = grads.wants(0), ww = grads.wants(1), wb = grads.wants(2);
        std::span<Scalar> gx = wx ? grads.at(0) : std::span<Scalar>{};
        std::span<Scalar> gw = ww ? grads.at(1) : std::span<Scalar>{};
        std::span<Scalar> gb = wb ? grads.at(2) : std::span<Scalar>{};
        const std::vector<Scalar> w_t = wx ? transposed_taps(d, wv) : std::vector<Scalar>{};
        for (std::size_t n = 0; n < d.B; ++n) {
          if (wb) {
            for (std::size_t l = 0; l < d.L_out; ++l)
              for (std::size_t o = 0; o < d.C_out; ++o)
                gb[o] += g[(n * d.L_out + l) * d.C_out + o];
          }
          conv_taps(d, d.L_out, [&](std::size_t l, long src, std::size_t t) {
            if (src < 0 || src >= static_cast<long>(d.L_in)) return;
            const Scalar* grow = g.data() + (n * d.L_out + l) * d.C_out;
            if (wx) {
              gemm_acc(1, d.C_out, d.C_in, grow, w_t.data() + t * d.C_in * d.C_out,
                       gx.data() + (n * d.L_in + src) * d.C_in);
            }
            if (ww) {
              gemm_tn_acc(1, d.C_in, d.C_out, xv.data() + (n * d.L_in + src) * d.C_in, grow,
                          gw.data() + t * d.C_in * d.C_out);
            }
          });
        }
      },
      "conv1d");
}

Var conv_transpose1d(const Var& x, const Var& w, const Var& b, std::size_t stride,
                     std::size_t padding, std::size_t out_len) {
  ConvDims d = conv_dims(x, w, b, "conv_transpose1d");
  require(stride >= 1, "conv_transpose1d: stride must be >= 1");
  d.stride = stride;
  d.padding = padding;
  d.L_out = out_len;
  const long base = static_cast<long>((d.L_in - 1) * stride + d.K) - 2 * static_cast<long>(padding);
  require(static_cast<long>(out_len) >= base && static_cast<long>(out_len) < base + static_cast<long>(stride),
          "conv_transpose1d: output length " + std::to_string(out_len) +
              " incompatible with input length " + std::to_string(d.L_in));
  // Roles of the long and short axes are swapped relative to conv1d: input
  // position l scatters into output position l*stride + t - padding.
  Tensor out(Shape{d.B, d.L_out, d.C_out});
  {
    auto o = out.mutable_data();
    auto xv = x.value().data(), wv = w.value().data(), bv = b.value().data();
    for (std::size_t n = 0; n < d.B; ++n) {
      for (std::size_t l = 0; l < d.L_out; ++l)
        std::copy_n(bv.begin(), d.C_out, o.data() + (n * d.L_out + l) * d.C_out);
      conv_taps(d, d.L_in, [&](std::size_t l, long dst, std::size_t t) {
        if (dst < 0 || dst >= static_cast<long>(d.L_out)) return;
        gemm_acc(1, d.C_in, d.C_out, xv.data() + (n * d.L_in + l) * d.C_in,
                 wv.data() + t * d.C_in * d.C_out, o.data() + (n * d.L_out + dst) * d.C_out);
      });
    }
  }
  Tensor xt = x.value(), wt = w.value();
  return make_result(
      std::move(out), {x, w, b},
      [xt, wt, d](std::span<const Scalar> g, GradAccess& grads) {
        auto xv = xt.data(), wv = wt.data();
        const bool wx = grads.wants(0), ww = grads.wants(1), wb = grads.wants(2);
        std::span<Scalar> gx = wx ? grads.at(0) : std::span<Scalar>{};
        std::span<Scalar> gw = ww ? grads.at(1) : std::span<Scalar>{};
        std::span<Scalar> gb = wb ? grads.at(2) : std::span<Scalar>{};
        const std::vector<Scalar> w_t = wx ? transposed_taps(d, wv) : std::vector<Scalar>{};
        for (std::size_t n = 0; n < d.B; ++n) {
          if (wb) {
            for (std::size_t l = 0; l < d.L_out; ++l)
              for (std::size_t o = 0; o < d.C_out; ++o)
                gb[o] += g[(n * d.L_out + l) * d.C_out + o];
          }
          conv_taps(d, d.L_in, [&](std::size_t l, long dst, std::size_t t) {
            if (dst < 0 || dst >= static_cast<long>(d.L_out)) return;
            const Scalar* grow = g.data() + (n * d.L_out + dst) * d.C_out;
            if (wx) {
              gemm_acc(1, d.C_out, d.C_in, grow, w_t.data() + t * d.C_in * d.C_out,
                       gx.data() + (n * d.L_in + l) * d.C_in);
            }
            if (ww) {
              gemm_tn_acc(1, d.C_in, d.C_out, xv.data() + (n * d.L_in + l) * d.C_in, grow,
                          gw.data() + t * d.C_in * d.C_out);
            }
          });
        }
      },
      "conv_transpose1d");
}

// ---------------------------------------------------------------------------
// Losses and densities

Var cross_entropy(const Var& logits, std::span<const std::int32_t> targets) {
  std::size_t counted = 0;
  for (auto t : targets) counted += t >= 0;
  if (counted == 0) throw ShapeError("cross_entropy: no targets");
  Var picked = pick_last(log_softmax_last(logits), targets);
  return scale(sum(picked), Scalar(-1) / static_cast<Scalar>(counted));
}

Var gaussian_log_density(const Var& y, const Var& mean, std::span<const double> variance) {
  require(y.shape() == mean.shape(), "gaussian_log_density: y and mean shapes differ " +
                                         shape_str(y.shape()) + " vs " + shape_str(mean.shape()));
  const std::size_t M = last_dim(y, "gaussian_log_density");
  require(variance.size() == M, "gaussian_log_density: expected " + std::to_string(M) +
                                    " variances, got " + std::to_string(variance.size()));
  for (double v : variance) {
    if (!(v > 0)) throw ShapeError("gaussian_log_density: variance must be positive");
  }
  auto var = std::make_shared<std::vector<Scalar>>(variance.begin(), variance.end());
  Tensor out(y.shape());
  auto o = out.mutable_data();
  auto yv = y.value().data(), mv = mean.value().data();
  const Scalar log2pi = static_cast<Scalar>(std::log(2 * std::numbers::pi));
  for (std::size_t i = 0; i < o.size(); ++i) {
    const Scalar s2 = (*var)[i % M];
    const Scalar r = yv[i] - mv[i];
    o[i] = Scalar(-0.5) * (log2pi + std::log(s2)) - r * r / (2 * s2);
  }
  Tensor yt = y.value(), mt = mean.value();
  return make_result(
      std::move(out), {y, mean},
      [yt, mt, var, M](std::span<const Scalar> g, GradAccess& grads) {
        auto yv = yt.data(), mv = mt.data();
        const bool wy = grads.wants(0), wm = grads.wants(1);
        std::span<Scalar> gy = wy ? grads.at(0) : std::span<Scalar>{};
        std::span<Scalar> gm = wm ? grads.at(1) : std::span<Scalar>{};
        for (std::size_t i = 0; i < g.size(); ++i) {
          const Scalar d = (yv[i] - mv[i]) / (*var)[i % M];
          if (wy) gy[i] -= g[i] * d;
          if (wm) gm[i] += g[i] * d;
        }
      },
      "gaussian_log_density");
}

Var std_normal_log_density(const Var& z) {
  const std::size_t D = last_dim(z, "std_normal_log_density");
  const Scalar log2pi = static_cast<Scalar>(std::log(2 * std::numbers::pi));
  Var quad = sum_last(square(z));
  return add_scalar(scale(quad, Scalar(-0.5)), Scalar(-0.5) * log2pi * static_cast<Scalar>(D));
}

}  // namespace lpt::ad
