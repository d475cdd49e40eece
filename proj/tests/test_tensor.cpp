#include <doctest.h>

#include <cmath>

#include "cerberus/tensor.hpp"
#include "cerberus/trainer.hpp"
#include "support/oracles.hpp"

using namespace cerberus;

namespace {

template <class S>
TensorT<S> randn_t(std::vector<std::int64_t> shape, Rng& rng, S std,
                   bool grad = true) {
  return TensorT<S>::randn(std::move(shape), rng, std, grad);
}

}  // namespace

TEST_CASE("matmul hand examples") {
  Tensor I = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor v = Tensor::from({2, 1}, {3, 4});
  Tensor out = matmul(I, v);
  CHECK(out.data()[0] == 3.0f);
  CHECK(out.data()[1] == 4.0f);

  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({2, 1}, {3, 4});
  CHECK(matmul(a, b).data()[0] == 11.0f);
}

TEST_CASE("matmul identity is bitwise") {
  Rng rng(1);
  Tensor A = randn_t<float>({7, 5}, rng, 1.5f, false);
  Tensor I = Tensor::zeros({5, 5});
  for (int i = 0; i < 5; ++i) I.data()[i * 5 + i] = 1.0f;
  Tensor out = matmul(A, I);
  for (std::int64_t i = 0; i < A.numel(); ++i)
    CHECK(out.data()[i] == A.data()[i]);
}

TEST_CASE("matmul rejects shape mismatch") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("softmax examples and row properties") {
  Tensor u = softmax_rows(Tensor::from({4}, {0, 0, 0, 0}));
  for (int i = 0; i < 4; ++i) CHECK(u.data()[i] == doctest::Approx(0.25));

  Tensor big = softmax_rows(Tensor::from({2}, {1000.0f, 0.0f}));
  CHECK(big.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(big.data()[1] == doctest::Approx(0.0).epsilon(1e-6));

  const auto ref = oracle::softmax({1.0, 2.0, 3.0});
  Tensor s = softmax_rows(Tensor::from({3}, {1, 2, 3}));
  for (int i = 0; i < 3; ++i)
    CHECK(double(s.data()[i]) == doctest::Approx(ref[std::size_t(i)]).epsilon(1e-4));

  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = randn_t<float>({4, 9}, rng, 3.0f, false);
    Tensor p = softmax_rows(x);
    for (int r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (int c = 0; c < 9; ++c) {
        const float v = p.data()[r * 9 + c];
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
        sum += v;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("silu examples") {
  Tensor z = silu(Tensor::from({1}, {0.0f}));
  CHECK(z.data()[0] == 0.0f);
  Tensor big = silu(Tensor::from({1}, {50.0f}));
  CHECK(big.data()[0] == doctest::Approx(50.0).epsilon(1e-6));
  Tensor one = silu(Tensor::from({1}, {1.0f}));
  CHECK(double(one.data()[0]) == doctest::Approx(oracle::silu(1.0)).epsilon(1e-4));
}

TEST_CASE("layernorm normalizes rows before gain and bias") {
  Rng rng(3);
  const int n = 16;
  Tensor x = randn_t<float>({5, n}, rng, 2.0f, false);
  Tensor g = Tensor::full({n}, 1.0f);
  Tensor b = Tensor::zeros({n});
  Tensor y = layer_norm(x, g, b);
  for (int r = 0; r < 5; ++r) {
    double mean = 0.0, var = 0.0;
    for (int c = 0; c < n; ++c) mean += y.data()[r * n + c];
    mean /= n;
    for (int c = 0; c < n; ++c) {
      const double d = y.data()[r * n + c] - mean;
      var += d * d;
    }
    var /= n;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("cross entropy of uniform logits is ln V") {
  const int V = 24;
  Tensor logits = Tensor::full({3, V}, 0.37f);
  Tensor ce = cross_entropy_mean(logits, {0, 5, 23});
  CHECK(double(ce.data()[0]) == doctest::Approx(std::log(double(V))).epsilon(1e-5));
  CHECK_THROWS_AS(cross_entropy_mean(logits, {0, 5, V}), std::out_of_range);
}

TEST_CASE("embedding rejects out-of-vocabulary ids") {
  Tensor table = Tensor::zeros({6, 4});
  CHECK_THROWS_AS(embedding(table, {6}), std::out_of_range);
  CHECK_THROWS_AS(embedding(table, {-1}), std::out_of_range);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  Tensor p = Tensor::from({3}, {1.0f, -2.0f, 0.5f}, true);
  p.grad();  // allocate zero gradient
  std::vector<Tensor*> params{&p};
  AdamState st(params);
  adam_step(params, st, 0.1f);
  adam_step(params, st, 0.1f);
  CHECK(p.data()[0] == 1.0f);
  CHECK(p.data()[1] == -2.0f);
  CHECK(p.data()[2] == 0.5f);
}

TEST_CASE("debug checks flag non-finite op results") {
  const bool prev = DebugChecks::enabled();
  DebugChecks::enabled() = true;
  Tensor ok = silu(Tensor::from({2}, {1.0f, -1.0f}));
  CHECK(std::isfinite(ok.data()[0]));
  Tensor huge = Tensor::from({1}, {3e38f});
  CHECK_THROWS(add(huge, huge));
  DebugChecks::enabled() = prev;
}

// ---------------------------------------------------------------------------
// Finite-difference oracles (double instantiation of the op set, eps=1e-3)
// ---------------------------------------------------------------------------

TEST_CASE("gradcheck: matmul 5x7 * 7x3") {
  Rng rng(10);
  auto a = randn_t<double>({5, 7}, rng, 0.8);
  auto b = randn_t<double>({7, 3}, rng, 0.8);
  auto wcol = TensorT<double>::from({3, 1}, {0.4, -0.9, 1.3});
  auto ones = TensorT<double>::from({1, 5}, std::vector<double>(5, 1.0));
  auto loss_fn = [&]() { return matmul(ones, matmul(matmul(a, b), wcol)); };
  auto res = oracle::grad_check({&a, &b}, loss_fn);
  CHECK(res.checked > 0);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("gradcheck: every differentiable op") {
  Rng rng(11);
  const int m = 4, n = 6, V = 9;

  SUBCASE("add, add_bias, scale, silu, concat") {
    auto x = randn_t<double>({m, n}, rng, 0.9);
    auto y = randn_t<double>({m, n}, rng, 0.9);
    auto b = randn_t<double>({n}, rng, 0.9);
    auto loss_fn = [&]() {
      auto h = concat_cols(silu(add_bias(add(x, y), b)), scale(x, 0.7));
      auto w = TensorT<double>::from({2 * n, 1}, std::vector<double>(2 * n, 0.3));
      auto ones = TensorT<double>::from({1, m}, std::vector<double>(m, 1.0));
      return matmul(ones, matmul(h, w));
    };
    auto res = oracle::grad_check({&x, &y, &b}, loss_fn);
    CHECK(res.max_rel_err < 1e-3);
  }

  SUBCASE("softmax") {
    auto x = randn_t<double>({m, n}, rng, 1.2);
    std::vector<double> wv(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) wv[std::size_t(i)] = 0.2 * (i + 1);
    auto loss_fn = [&]() {
      auto p = softmax_rows(x);
      auto w = TensorT<double>::from({n, 1}, wv);
      auto ones = TensorT<double>::from({1, m}, std::vector<double>(m, 1.0));
      return matmul(ones, matmul(p, w));
    };
    auto res = oracle::grad_check({&x}, loss_fn);
    CHECK(res.max_rel_err < 1e-3);
  }

  SUBCASE("layer_norm") {
    auto x = randn_t<double>({m, n}, rng, 1.1);
    auto g = randn_t<double>({n}, rng, 0.4);
    auto b = randn_t<double>({n}, rng, 0.4);
    auto loss_fn = [&]() {
      auto hn = layer_norm(x, g, b);
      auto w = TensorT<double>::from({n, 1}, std::vector<double>(n, 0.25));
      auto ones = TensorT<double>::from({1, m}, std::vector<double>(m, 1.0));
      return matmul(ones, matmul(hn, w));
    };
    auto res = oracle::grad_check({&x, &g, &b}, loss_fn);
    CHECK(res.max_rel_err < 1e-3);
  }

  SUBCASE("embedding + cross_entropy") {
    auto table = randn_t<double>({V, n}, rng, 0.8);
    auto proj = randn_t<double>({n, V}, rng, 0.8);
    const std::vector<int> ids{0, 3, 8, 3};
    const std::vector<int> targets{1, 0, 7, 2};
    auto loss_fn = [&]() {
      return cross_entropy_mean(matmul(embedding(table, ids), proj), targets);
    };
    auto res = oracle::grad_check({&table, &proj}, loss_fn);
    CHECK(res.max_rel_err < 1e-3);
  }

  SUBCASE("causal self-attention") {
    const int T = 5, d = 8, heads = 2;
    auto q = randn_t<double>({T, d}, rng, 0.9);
    auto k = randn_t<double>({T, d}, rng, 0.9);
    auto v = randn_t<double>({T, d}, rng, 0.9);
    auto loss_fn = [&]() {
      auto a = causal_self_attention(q, k, v, heads);
      auto w = TensorT<double>::from({d, 1}, std::vector<double>(d, 0.3));
      auto ones = TensorT<double>::from({1, T}, std::vector<double>(T, 1.0));
      return matmul(ones, matmul(a, w));
    };
    auto res = oracle::grad_check({&q, &k, &v}, loss_fn);
    CHECK(res.max_rel_err < 1e-3);
  }
}

TEST_CASE("float gradients track the double oracle") {
  // The production build is float32; its analytic matmul gradients must
  // match double finite differences within 1e-3 relative.
  Rng rng(12);
  Tensor a32 = randn_t<float>({5, 7}, rng, 0.8f);
  Tensor b32 = randn_t<float>({7, 3}, rng, 0.8f);
  auto a64 = a32.cast<double>();
  auto b64 = b32.cast<double>();
  a64.set_requires_grad(true);
  b64.set_requires_grad(true);

  auto ones_col64 = TensorT<double>::from({3, 1}, std::vector<double>(3, 1.0));
  auto ones_row64 = TensorT<double>::from({1, 5}, std::vector<double>(5, 1.0));
  auto loss64 = [&]() { return matmul(ones_row64, matmul(matmul(a64, b64), ones_col64)); };

  Tensor ones_col = Tensor::from({3, 1}, {1, 1, 1});
  Tensor ones_row = Tensor::from({1, 5}, {1, 1, 1, 1, 1});
  Tensor loss32 = matmul(ones_row, matmul(matmul(a32, b32), ones_col));
  backward(loss32);

  const double eps = 1e-3;
  for (std::int64_t j = 0; j < a64.numel(); ++j) {
    const double keep = a64.data()[j];
    a64.data()[j] = keep + eps;
    const double up = loss64().data()[0];
    a64.data()[j] = keep - eps;
    const double dn = loss64().data()[0];
    a64.data()[j] = keep;
    const double fd = (up - dn) / (2 * eps);
    const double an = double(a32.grad()[j]);
    CHECK(std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}) < 1e-3);
  }
}

TEST_CASE("backward visits shared subgraphs once") {
  // y = x used twice: d/dx (x*x_sum + x_sum) accumulates exactly once per
  // appearance; a double visit would double the gradient.
  auto x = TensorT<double>::from({1, 2}, {1.5, -0.5}, true);
  auto s = add(x, x);  // 2x
  auto w = TensorT<double>::from({2, 1}, {1.0, 1.0});
  auto loss = matmul(add(s, x), w);  // sum(3x)
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  CHECK(x.grad()[1] == doctest::Approx(3.0));
}
