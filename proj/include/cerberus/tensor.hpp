#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "cerberus/common.hpp"
#include "cerberus/kernels.hpp"
#include "cerberus/rng.hpp"

namespace cerberus {

// Reverse-mode autodiff over a closed op set. Tensors are row-major dense
// buffers; an op that sees any grad-connected input records an OpNode with
// the saved values its backward needs. backward() walks the graph once in
// reverse topological order.
//
// Scalar-templated so tests can instantiate the whole op set at double
// precision for finite-difference oracles; the product build uses float.

template <class S>
struct TensorImplT;

template <class S>
struct OpNodeT {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImplT<S>>> inputs;
  std::function<void(const TensorImplT<S>&)> backward;
};

template <class S>
struct TensorImplT {
  std::vector<std::int64_t> shape;
  std::vector<S> data;
  std::vector<S> grad;  // empty until backward (or ensure_grad) touches it
  bool requires_grad = false;
  std::shared_ptr<OpNodeT<S>> node;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(std::size_t(numel()), S(0));
  }
};

template <class S>
class TensorT {
 public:
  using Impl = TensorImplT<S>;

  TensorT() = default;
  explicit TensorT(std::vector<std::int64_t> shape, bool requires_grad = false)
      : p_(std::make_shared<Impl>()) {
    for (auto d : shape)
      check_shape(d > 0, "tensor dimensions must be positive");
    p_->shape = std::move(shape);
    p_->data.assign(std::size_t(p_->numel()), S(0));
    p_->requires_grad = requires_grad;
  }

  static TensorT zeros(std::vector<std::int64_t> shape,
                       bool requires_grad = false) {
    return TensorT(std::move(shape), requires_grad);
  }
  static TensorT full(std::vector<std::int64_t> shape, S value) {
    TensorT t(std::move(shape));
    std::fill(t.p_->data.begin(), t.p_->data.end(), value);
    return t;
  }
  static TensorT from(std::vector<std::int64_t> shape, std::vector<S> values,
                      bool requires_grad = false) {
    TensorT t;
    t.p_ = std::make_shared<Impl>();
    t.p_->shape = std::move(shape);
    check_shape(std::int64_t(values.size()) == t.p_->numel(),
                "value count does not match shape");
    t.p_->data = std::move(values);
    t.p_->requires_grad = requires_grad;
    return t;
  }
  static TensorT randn(std::vector<std::int64_t> shape, Rng& rng, S stddev,
                       bool requires_grad = false) {
    TensorT t(std::move(shape), requires_grad);
    for (auto& v : t.p_->data) v = S(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return p_ != nullptr; }
  const std::vector<std::int64_t>& shape() const { return p_->shape; }
  std::int64_t dim(int i) const { return p_->shape[std::size_t(i)]; }
  int rank() const { return int(p_->shape.size()); }
  std::int64_t numel() const { return p_->numel(); }

  S* data() { return p_->data.data(); }
  const S* data() const { return p_->data.data(); }
  std::vector<S>& vec() { return p_->data; }
  const std::vector<S>& vec() const { return p_->data; }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool v) { p_->requires_grad = v; }
  bool grad_connected() const {
    return p_->requires_grad || p_->node != nullptr;
  }
  bool has_grad() const { return !p_->grad.empty(); }
  S* grad() {
    p_->ensure_grad();
    return p_->grad.data();
  }
  const std::vector<S>& grad_vec() const { return p_->grad; }
  void zero_grad() {
    if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), S(0));
  }
  void drop_grad() { p_->grad.clear(); }

  std::shared_ptr<Impl> impl() const { return p_; }

  template <class T2>
  TensorT<T2> cast() const {
    TensorT<T2> out(p_->shape, p_->requires_grad);
    for (std::size_t i = 0; i < p_->data.size(); ++i)
      out.data()[i] = T2(p_->data[i]);
    return out;
  }

  // Detached view of the same buffer: shares nothing with the graph.
  TensorT detach() const {
    TensorT t;
    t.p_ = std::make_shared<Impl>();
    t.p_->shape = p_->shape;
    t.p_->data = p_->data;
    return t;
  }

 private:
  std::shared_ptr<Impl> p_;

  template <class S2>
  friend TensorT<S2> wrap_result(std::vector<std::int64_t> shape,
                                 std::vector<S2> data, const char* op,
                                 std::vector<TensorT<S2>> inputs,
                                 std::function<void(const TensorImplT<S2>&)> bw);
};

namespace detail {
template <class S>
inline void check_finite(const std::vector<S>& v, const char* op) {
  if (!DebugChecks::enabled()) return;
  for (S x : v)
    if (!std::isfinite(double(x)))
      throw std::runtime_error(std::string("non-finite value produced by op ") +
                               op);
}
}  // namespace detail

template <class S>
TensorT<S> wrap_result(std::vector<std::int64_t> shape, std::vector<S> data,
                       const char* op, std::vector<TensorT<S>> inputs,
                       std::function<void(const TensorImplT<S>&)> bw) {
  detail::check_finite(data, op);
  TensorT<S> out;
  out.p_ = std::make_shared<TensorImplT<S>>();
  out.p_->shape = std::move(shape);
  out.p_->data = std::move(data);
  bool connected = false;
  for (const auto& t : inputs)
    if (t.grad_connected()) connected = true;
  if (connected) {
    auto node = std::make_shared<OpNodeT<S>>();
    node->op = op;
    for (const auto& t : inputs) node->inputs.push_back(t.impl());
    node->backward = std::move(bw);
    out.p_->node = std::move(node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

// [m x k] * [k x n] -> [m x n]
template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  check_shape(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 tensors");
  check_shape(a.dim(1) == b.dim(0), "matmul inner dimensions differ");
  const int m = int(a.dim(0)), k = int(a.dim(1)), n = int(b.dim(1));
  std::vector<S> out(std::size_t(m) * n);
  kern::matmul_rows(a.data(), b.data(), out.data(), m, k, n);
  auto ai = a.impl();
  auto bi = b.impl();
  return wrap_result<S>(
      {m, n}, std::move(out), "matmul", {a, b},
      [ai, bi, m, k, n](const TensorImplT<S>& o) {
        if (ai->requires_grad || ai->node) {
          ai->ensure_grad();
          kern::matmul_abt_acc(o.grad.data(), bi->data.data(),
                               ai->grad.data(), m, n, k);
        }
        if (bi->requires_grad || bi->node) {
          bi->ensure_grad();
          kern::matmul_atb_acc(ai->data.data(), o.grad.data(),
                               bi->grad.data(), m, k, n);
        }
      });
}

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  check_shape(a.shape() == b.shape(), "add expects identical shapes");
  std::vector<S> out(a.vec());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return wrap_result<S>(a.shape(), std::move(out), "add", {a, b},
                        [ai, bi](const TensorImplT<S>& o) {
                          if (ai->requires_grad || ai->node) {
                            ai->ensure_grad();
                            for (std::size_t i = 0; i < o.grad.size(); ++i)
                              ai->grad[i] += o.grad[i];
                          }
                          if (bi->requires_grad || bi->node) {
                            bi->ensure_grad();
                            for (std::size_t i = 0; i < o.grad.size(); ++i)
                              bi->grad[i] += o.grad[i];
                          }
                        });
}

// x[m x n] + b[n] broadcast over rows.
template <class S>
TensorT<S> add_bias(const TensorT<S>& x, const TensorT<S>& b) {
  check_shape(x.rank() == 2 && b.rank() == 1, "add_bias expects [m x n] + [n]");
  check_shape(x.dim(1) == b.dim(0), "bias width mismatch");
  const int m = int(x.dim(0)), n = int(x.dim(1));
  std::vector<S> out(x.vec());
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out[std::size_t(r) * n + c] += b.data()[c];
  auto xi = x.impl();
  auto bi = b.impl();
  return wrap_result<S>(
      x.shape(), std::move(out), "add_bias", {x, b},
      [xi, bi, m, n](const TensorImplT<S>& o) {
        if (xi->requires_grad || xi->node) {
          xi->ensure_grad();
          for (std::size_t i = 0; i < o.grad.size(); ++i)
            xi->grad[i] += o.grad[i];
        }
        if (bi->requires_grad || bi->node) {
          bi->ensure_grad();
          for (int r = 0; r < m; ++r)
            for (int c = 0; c < n; ++c)
              bi->grad[std::size_t(c)] += o.grad[std::size_t(r) * n + c];
        }
      });
}

template <class S>
TensorT<S> scale(const TensorT<S>& x, S c) {
  std::vector<S> out(x.vec());
  for (auto& v : out) v *= c;
  auto xi = x.impl();
  return wrap_result<S>(x.shape(), std::move(out), "scale", {x},
                        [xi, c](const TensorImplT<S>& o) {
                          if (xi->requires_grad || xi->node) {
                            xi->ensure_grad();
                            for (std::size_t i = 0; i < o.grad.size(); ++i)
                              xi->grad[i] += c * o.grad[i];
                          }
                        });
}

template <class S>
TensorT<S> silu(const TensorT<S>& x) {
  std::vector<S> out(x.vec());
  for (auto& v : out) v = kern::silu(v);
  auto xi = x.impl();
  return wrap_result<S>(x.shape(), std::move(out), "silu", {x},
                        [xi](const TensorImplT<S>& o) {
                          if (xi->requires_grad || xi->node) {
                            xi->ensure_grad();
                            for (std::size_t i = 0; i < o.grad.size(); ++i)
                              xi->grad[i] +=
                                  kern::silu_grad(xi->data[i]) * o.grad[i];
                          }
                        });
}

// [m x p] ++ [m x q] -> [m x (p+q)] along columns.
template <class S>
TensorT<S> concat_cols(const TensorT<S>& a, const TensorT<S>& b) {
  check_shape(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
              "concat_cols expects matching row counts");
  const int m = int(a.dim(0)), p = int(a.dim(1)), q = int(b.dim(1));
  std::vector<S> out(std::size_t(m) * (p + q));
  for (int r = 0; r < m; ++r) {
    std::copy_n(a.data() + std::size_t(r) * p, p,
                out.data() + std::size_t(r) * (p + q));
    std::copy_n(b.data() + std::size_t(r) * q, q,
                out.data() + std::size_t(r) * (p + q) + p);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return wrap_result<S>(
      {m, p + q}, std::move(out), "concat_cols", {a, b},
      [ai, bi, m, p, q](const TensorImplT<S>& o) {
        for (int r = 0; r < m; ++r) {
          const S* g = o.grad.data() + std::size_t(r) * (p + q);
          if (ai->requires_grad || ai->node) {
            ai->ensure_grad();
            for (int c = 0; c < p; ++c)
              ai->grad[std::size_t(r) * p + c] += g[c];
          }
          if (bi->requires_grad || bi->node) {
            bi->ensure_grad();
            for (int c = 0; c < q; ++c)
              bi->grad[std::size_t(r) * q + c] += g[p + c];
          }
        }
      });
}

// Row-wise stabilized softmax over the last dimension of a 1-D or 2-D tensor.
template <class S>
TensorT<S> softmax_rows(const TensorT<S>& x) {
  check_shape(x.rank() == 1 || x.rank() == 2, "softmax expects rank 1 or 2");
  const int n = int(x.dim(x.rank() - 1));
  const int m = x.rank() == 2 ? int(x.dim(0)) : 1;
  std::vector<S> out(x.vec());
  for (int r = 0; r < m; ++r) kern::softmax_row(out.data() + std::size_t(r) * n, n);
  const std::vector<S> saved = out;
  auto xi = x.impl();
  return wrap_result<S>(
      x.shape(), std::move(out), "softmax", {x},
      [xi, saved, m, n](const TensorImplT<S>& o) {
        if (!(xi->requires_grad || xi->node)) return;
        xi->ensure_grad();
        for (int r = 0; r < m; ++r) {
          const S* p = saved.data() + std::size_t(r) * n;
          const S* g = o.grad.data() + std::size_t(r) * n;
          S dotpg = S(0);
          for (int i = 0; i < n; ++i) dotpg += p[i] * g[i];
          for (int i = 0; i < n; ++i)
            xi->grad[std::size_t(r) * n + i] += p[i] * (g[i] - dotpg);
        }
      });
}

// Per-row layer norm with learned gain/bias.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain,
                      const TensorT<S>& bias, S eps = S(1e-5)) {
  check_shape(x.rank() == 2, "layer_norm expects [m x n]");
  const int m = int(x.dim(0)), n = int(x.dim(1));
  check_shape(gain.rank() == 1 && gain.dim(0) == n, "gain width mismatch");
  check_shape(bias.rank() == 1 && bias.dim(0) == n, "bias width mismatch");
  std::vector<S> out(std::size_t(m) * n);
  std::vector<S> mean(static_cast<std::size_t>(m)), rstd(static_cast<std::size_t>(m));
  for (int r = 0; r < m; ++r)
    kern::layernorm_row(x.data() + std::size_t(r) * n, gain.data(),
                        bias.data(), out.data() + std::size_t(r) * n, n, eps,
                        &mean[std::size_t(r)], &rstd[std::size_t(r)]);
  auto xi = x.impl();
  auto gi = gain.impl();
  auto bi = bias.impl();
  return wrap_result<S>(
      x.shape(), std::move(out), "layer_norm", {x, gain, bias},
      [xi, gi, bi, mean, rstd, m, n](const TensorImplT<S>& o) {
        for (int r = 0; r < m; ++r) {
          const S* xr = xi->data.data() + std::size_t(r) * n;
          const S* g = o.grad.data() + std::size_t(r) * n;
          const S mu = mean[std::size_t(r)], rs = rstd[std::size_t(r)];
          if (gi->requires_grad || gi->node) {
            gi->ensure_grad();
            for (int c = 0; c < n; ++c)
              gi->grad[std::size_t(c)] += g[c] * (xr[c] - mu) * rs;
          }
          if (bi->requires_grad || bi->node) {
            bi->ensure_grad();
            for (int c = 0; c < n; ++c) bi->grad[std::size_t(c)] += g[c];
          }
          if (xi->requires_grad || xi->node) {
            xi->ensure_grad();
            // dx = rs*(a - mean(a) - xhat*mean(a*xhat)), a = g*gain
            S mean_a = S(0), mean_ax = S(0);
            for (int c = 0; c < n; ++c) {
              const S a = g[c] * gi->data[std::size_t(c)];
              const S xh = (xr[c] - mu) * rs;
              mean_a += a;
              mean_ax += a * xh;
            }
            mean_a /= S(n);
            mean_ax /= S(n);
            for (int c = 0; c < n; ++c) {
              const S a = g[c] * gi->data[std::size_t(c)];
              const S xh = (xr[c] - mu) * rs;
              xi->grad[std::size_t(r) * n + c] +=
                  rs * (a - mean_a - xh * mean_ax);
            }
          }
        }
      });
}

// table[V x d] indexed by ids -> [n x d]; backward scatter-adds into table.
template <class S>
TensorT<S> embedding(const TensorT<S>& table, const std::vector<int>& ids) {
  check_shape(table.rank() == 2, "embedding table must be [V x d]");
  const int V = int(table.dim(0)), d = int(table.dim(1));
  const int n = int(ids.size());
  check_shape(n > 0, "embedding expects at least one id");
  for (int id : ids)
    if (id < 0 || id >= V)
      throw std::out_of_range("embedding id out of vocabulary range");
  std::vector<S> out(std::size_t(n) * d);
  for (int r = 0; r < n; ++r)
    std::copy_n(table.data() + std::size_t(ids[std::size_t(r)]) * d, d,
                out.data() + std::size_t(r) * d);
  auto ti = table.impl();
  return wrap_result<S>(
      {n, d}, std::move(out), "embedding", {table},
      [ti, ids, d](const TensorImplT<S>& o) {
        if (!(ti->requires_grad || ti->node)) return;
        ti->ensure_grad();
        for (std::size_t r = 0; r < ids.size(); ++r) {
          S* dst = ti->grad.data() + std::size_t(ids[r]) * d;
          const S* g = o.grad.data() + r * d;
          for (int c = 0; c < d; ++c) dst[c] += g[c];
        }
      });
}

// Mean cross-entropy (natural log) of logits[n x V] against integer targets.
template <class S>
TensorT<S> cross_entropy_mean(const TensorT<S>& logits,
                              const std::vector<int>& targets) {
  check_shape(logits.rank() == 2, "cross_entropy expects [n x V]");
  const int n = int(logits.dim(0)), V = int(logits.dim(1));
  check_shape(int(targets.size()) == n, "target count mismatch");
  for (int t : targets)
    if (t < 0 || t >= V)
      throw std::out_of_range("cross_entropy target out of vocabulary range");
  std::vector<S> probs(std::size_t(n) * V);
  S loss = S(0);
  for (int r = 0; r < n; ++r) {
    const S* row = logits.data() + std::size_t(r) * V;
    S* p = probs.data() + std::size_t(r) * V;
    S mx = row[0];
    for (int c = 1; c < V; ++c)
      if (row[c] > mx) mx = row[c];
    S sum = S(0);
    for (int c = 0; c < V; ++c) {
      p[c] = std::exp(row[c] - mx);
      sum += p[c];
    }
    const S inv = S(1) / sum;
    for (int c = 0; c < V; ++c) p[c] *= inv;
    loss += std::log(sum) + mx - row[targets[std::size_t(r)]];
  }
  loss /= S(n);
  auto li = logits.impl();
  return wrap_result<S>(
      {1}, {loss}, "cross_entropy", {logits},
      [li, probs, targets, n, V](const TensorImplT<S>& o) {
        if (!(li->requires_grad || li->node)) return;
        li->ensure_grad();
        const S g = o.grad[0] / S(n);
        for (int r = 0; r < n; ++r) {
          const S* p = probs.data() + std::size_t(r) * V;
          S* dst = li->grad.data() + std::size_t(r) * V;
          for (int c = 0; c < V; ++c) dst[c] += g * p[c];
          dst[targets[std::size_t(r)]] -= g;
        }
      });
}

// Causal multi-head self-attention over q,k,v [T x d]; row i attends rows
// 0..i. Shares attention_row with the KV-cache decode path so a training
// forward and an incremental forward agree bitwise.
template <class S>
TensorT<S> causal_self_attention(const TensorT<S>& q, const TensorT<S>& k,
                                 const TensorT<S>& v, int n_heads) {
  check_shape(q.shape() == k.shape() && q.shape() == v.shape(),
              "attention expects q, k, v of identical shape");
  check_shape(q.rank() == 2, "attention expects [T x d]");
  const int T = int(q.dim(0)), d = int(q.dim(1));
  check_shape(d % n_heads == 0, "d_model must divide by head count");
  const int hd = d / n_heads;
  std::vector<S> out(std::size_t(T) * d);
  std::vector<S> probs(std::size_t(n_heads) * T * T, S(0));
  std::vector<S> row_probs(std::size_t(n_heads) * T);
  for (int i = 0; i < T; ++i) {
    kern::attention_row(q.data() + std::size_t(i) * d, k.data(), v.data(),
                        i + 1, nullptr, n_heads, hd,
                        out.data() + std::size_t(i) * d, row_probs.data());
    for (int h = 0; h < n_heads; ++h)
      std::copy_n(row_probs.data() + std::size_t(h) * (i + 1), i + 1,
                  probs.data() + (std::size_t(h) * T + std::size_t(i)) * T);
  }
  auto qi = q.impl();
  auto ki = k.impl();
  auto vi = v.impl();
  return wrap_result<S>(
      q.shape(), std::move(out), "attention", {q, k, v},
      [qi, ki, vi, probs, T, d, hd, n_heads](const TensorImplT<S>& o) {
        const S sc = S(1) / std::sqrt(S(hd));
        qi->ensure_grad();
        ki->ensure_grad();
        vi->ensure_grad();
        std::vector<S> ds(static_cast<std::size_t>(T));
        for (int h = 0; h < n_heads; ++h) {
          const int off = h * hd;
          for (int i = 0; i < T; ++i) {
            const S* p = probs.data() + (std::size_t(h) * T + std::size_t(i)) * T;
            const S* go = o.grad.data() + std::size_t(i) * d + off;
            // dscore_ij = <dout_i, v_j>; dv_j += p_ij * dout_i
            S pg = S(0);
            for (int j = 0; j <= i; ++j) {
              ds[std::size_t(j)] =
                  kern::dot(go, vi->data.data() + std::size_t(j) * d + off, hd);
              pg += p[j] * ds[std::size_t(j)];
              S* dv = vi->grad.data() + std::size_t(j) * d + off;
              for (int c = 0; c < hd; ++c) dv[c] += p[j] * go[c];
            }
            // softmax backward, then q/k chain
            S* dq = qi->grad.data() + std::size_t(i) * d + off;
            const S* qrow = qi->data.data() + std::size_t(i) * d + off;
            for (int j = 0; j <= i; ++j) {
              const S da = p[j] * (ds[std::size_t(j)] - pg) * sc;
              const S* krow = ki->data.data() + std::size_t(j) * d + off;
              S* dk = ki->grad.data() + std::size_t(j) * d + off;
              for (int c = 0; c < hd; ++c) {
                dq[c] += da * krow[c];
                dk[c] += da * qrow[c];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Backward driver
// ---------------------------------------------------------------------------

template <class S>
void backward(TensorT<S> loss) {
  check_shape(loss.numel() == 1, "backward expects a scalar loss");
  using ImplPtr = TensorImplT<S>*;
  std::vector<std::shared_ptr<TensorImplT<S>>> order;
  std::unordered_set<ImplPtr> seen;

  // Iterative post-order DFS; each node appears exactly once.
  struct Frame {
    std::shared_ptr<TensorImplT<S>> impl;
    std::size_t next_child = 0;
  };
  std::vector<Frame> stack;
  if (loss.impl()->node) {
    stack.push_back({loss.impl(), 0});
    seen.insert(loss.impl().get());
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    auto& node = f.impl->node;
    if (!node || f.next_child >= node->inputs.size()) {
      order.push_back(f.impl);
      stack.pop_back();
      continue;
    }
    auto child = node->inputs[f.next_child++];
    if (child->node && !seen.count(child.get())) {
      seen.insert(child.get());
      stack.push_back({child, 0});
    }
  }

  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    (*it)->node->backward(**it);
}

using Tensor = TensorT<float>;

}  // namespace cerberus
