#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

// noinline keeps exactly one compiled copy of each kernel instantiation, so
// every caller (training ops, decode path) runs literally the same machine
// code; inlining could otherwise contract mul+add differently per call site.
#if defined(__GNUC__) || defined(__clang__)
#define CERB_NOINLINE __attribute__((noinline))
#else
#define CERB_NOINLINE
#endif

namespace cerberus::kern {

// Accumulation-order contract
// ---------------------------
// Every kernel here commits to a fixed, input-shape-independent order of
// floating point operations per output element:
//   * matvec accumulates out[c] strictly in k order (axpy over rows of W),
//     so a row of a batched product is bit-identical to the same row
//     computed alone;
//   * dot uses four fixed-stride partial sums reduced as (s0+s1)+(s2+s3);
//   * attention iterates attended columns in ascending index order and
//     skips masked columns entirely (adding nothing, not adding zeros).
// The decode engine's exact-match guarantees rest on this contract; do not
// "optimize" these loops with reassociating math flags.

template <class S>
CERB_NOINLINE S dot(const S* a, const S* b, int n) {
  S s0 = S(0), s1 = S(0), s2 = S(0), s3 = S(0);
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// out[1 x n] = x[1 x k] * W[k x n], W row-major. Sequential k-loop per
// output element; each out[c] is an independent accumulator chain.
template <class S>
CERB_NOINLINE void matvec(const S* x, const S* W, S* out, int k, int n) {
  for (int c = 0; c < n; ++c) out[c] = S(0);
  for (int j = 0; j < k; ++j) {
    const S xv = x[j];
    const S* row = W + std::size_t(j) * n;
    for (int c = 0; c < n; ++c) out[c] += xv * row[c];
  }
}

// out[m x n] = A[m x k] * W[k x n], one matvec per row.
template <class S>
inline void matmul_rows(const S* A, const S* W, S* out, int m, int k, int n) {
  for (int r = 0; r < m; ++r)
    matvec(A + std::size_t(r) * k, W, out + std::size_t(r) * n, k, n);
}

// dX[m x k] += dOut[m x n] * W^T, W row-major [k x n]. Contiguous dots.
template <class S>
inline void matmul_abt_acc(const S* dOut, const S* W, S* dX, int m, int n,
                           int k) {
  for (int r = 0; r < m; ++r) {
    const S* g = dOut + std::size_t(r) * n;
    S* row = dX + std::size_t(r) * k;
    for (int j = 0; j < k; ++j) row[j] += dot(g, W + std::size_t(j) * n, n);
  }
}

// dW[k x n] += A^T[k x m] * dOut[m x n], A row-major [m x k].
template <class S>
inline void matmul_atb_acc(const S* A, const S* dOut, S* dW, int m, int k,
                           int n) {
  for (int r = 0; r < m; ++r) {
    const S* a = A + std::size_t(r) * k;
    const S* g = dOut + std::size_t(r) * n;
    for (int j = 0; j < k; ++j) {
      const S av = a[j];
      S* w = dW + std::size_t(j) * n;
      for (int c = 0; c < n; ++c) w[c] += av * g[c];
    }
  }
}

template <class S>
inline S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

template <class S>
inline S silu(S x) {
  return x * sigmoid(x);
}

// d/dx silu(x) = sig(x) * (1 + x * (1 - sig(x)))
template <class S>
inline S silu_grad(S x) {
  const S s = sigmoid(x);
  return s * (S(1) + x * (S(1) - s));
}

// In-place stabilized softmax over one row.
template <class S>
CERB_NOINLINE void softmax_row(S* v, int n) {
  S mx = v[0];
  for (int i = 1; i < n; ++i)
    if (v[i] > mx) mx = v[i];
  S sum = S(0);
  for (int i = 0; i < n; ++i) {
    v[i] = std::exp(v[i] - mx);
    sum += v[i];
  }
  const S inv = S(1) / sum;
  for (int i = 0; i < n; ++i) v[i] *= inv;
}

// Shannon entropy in bits of softmax(v); 0*log0 contributes nothing.
template <class S>
inline double entropy_bits(const S* v, int n) {
  S mx = v[0];
  for (int i = 1; i < n; ++i)
    if (v[i] > mx) mx = v[i];
  double sum = 0.0;
  std::vector<double> e(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    e[std::size_t(i)] = std::exp(double(v[i]) - double(mx));
    sum += e[std::size_t(i)];
  }
  double h = 0.0;
  for (int i = 0; i < n; ++i) {
    const double p = e[std::size_t(i)] / sum;
    if (p > 0.0) h -= p * std::log2(p);
  }
  return h;
}

// y = (x - mean)/sqrt(var + eps) * gain + bias over one row; optionally
// reports mean and the reciprocal stddev for the backward pass.
template <class S>
CERB_NOINLINE void layernorm_row(const S* x, const S* gain, const S* bias, S* y,
                          int n, S eps, S* mean_out = nullptr,
                          S* rstd_out = nullptr) {
  S mean = S(0);
  for (int i = 0; i < n; ++i) mean += x[i];
  mean /= S(n);
  S var = S(0);
  for (int i = 0; i < n; ++i) {
    const S d = x[i] - mean;
    var += d * d;
  }
  var /= S(n);
  const S rstd = S(1) / std::sqrt(var + eps);
  for (int i = 0; i < n; ++i) y[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
  if (mean_out) *mean_out = mean;
  if (rstd_out) *rstd_out = rstd;
}

// Lowest index wins ties, so greedy argmax is fully deterministic.
template <class S>
inline int argmax(const S* v, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Multi-head attention for one query row.
//
// q: [d] (d = n_heads * head_dim), K/V: row-major [n_cols x d].
// mask: per-column allow flags (nullptr = attend to all n_cols columns).
// Masked columns are skipped in score, softmax and value accumulation, so
// the result is bit-identical to an attention over only the allowed rows.
// probs_out, when given, receives softmax weights per head at the allowed
// columns (zeros elsewhere), laid out [n_heads x n_cols].
template <class S>
CERB_NOINLINE void attention_row(const S* q, const S* K, const S* V, int n_cols,
                          const std::uint8_t* mask, int n_heads, int head_dim,
                          S* out, S* probs_out = nullptr) {
  const int d = n_heads * head_dim;
  const S scale = S(1) / std::sqrt(S(head_dim));
  std::vector<S> scores(static_cast<std::size_t>(n_cols));
  for (int h = 0; h < n_heads; ++h) {
    const int off = h * head_dim;
    S mx = S(0);
    bool any = false;
    for (int j = 0; j < n_cols; ++j) {
      if (mask && !mask[j]) continue;
      const S s = dot(q + off, K + std::size_t(j) * d + off, head_dim) * scale;
      scores[std::size_t(j)] = s;
      if (!any || s > mx) mx = s;
      any = true;
    }
    S sum = S(0);
    for (int j = 0; j < n_cols; ++j) {
      if (mask && !mask[j]) continue;
      const S e = std::exp(scores[std::size_t(j)] - mx);
      scores[std::size_t(j)] = e;
      sum += e;
    }
    const S inv = S(1) / sum;
    S* o = out + off;
    for (int c = 0; c < head_dim; ++c) o[c] = S(0);
    for (int j = 0; j < n_cols; ++j) {
      if (mask && !mask[j]) continue;
      const S p = scores[std::size_t(j)] * inv;
      if (probs_out) probs_out[std::size_t(h) * n_cols + std::size_t(j)] = p;
      const S* vrow = V + std::size_t(j) * d + off;
      for (int c = 0; c < head_dim; ++c) o[c] += p * vrow[c];
    }
  }
}

}  // namespace cerberus::kern
