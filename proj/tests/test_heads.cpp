#include <doctest.h>

#include <filesystem>

#include "cerberus/heads.hpp"
#include "support/oracles.hpp"

using namespace cerberus;

namespace {

HeadConfig cfg_for(Paradigm p, int H, int R, ResblockVariant variant,
                   int s = 1) {
  HeadConfig c;
  c.paradigm = p;
  c.n_heads = H;
  c.resblocks = R;
  c.special_pos = s;
  c.top_k = 4;
  c.variant = variant;
  return c;
}

HeadStack random_stack(Paradigm p, int H, int R, int d, int V, Rng& rng,
                       ResblockVariant variant = ResblockVariant::Paper) {
  Tensor lm = Tensor::randn({d, V}, rng, 0.5f);
  HeadStack stack = init_head_stack(cfg_for(p, H, R, variant), d, V, lm, rng);
  for (auto& [name, t] : named_params(stack))
    for (std::int64_t i = 0; i < t->numel(); ++i)
      t->data()[i] = rng.normal() * 0.4f;
  return stack;
}

// Naive head-by-head oracle: runs each head's blocks in order, storing the
// depth outputs so a later head can read its tap.
std::vector<Tensor> sequential_oracle(const HeadStack& stack,
                                      const Tensor& h_last) {
  const int H = stack.cfg.n_heads, R = stack.cfg.resblocks;
  std::vector<std::vector<Tensor>> outs(static_cast<std::size_t>(H));
  std::vector<Tensor> logits;
  for (int i = 0; i < H; ++i) {
    Tensor h = h_last;
    for (int j = 0; j < R; ++j) {
      const auto& blk = stack.blocks[std::size_t(i)][std::size_t(j)];
      if (blk.special) {
        const Tensor& tap = outs[std::size_t(i - 1)][std::size_t(j - 1)];
        h = special_resblock_forward(blk, h, tap, stack.cfg.variant);
      } else {
        h = resblock_forward(blk, h, stack.cfg.variant);
      }
      outs[std::size_t(i)].push_back(h);
    }
    logits.push_back(matmul(h, stack.fc[std::size_t(i)]));
  }
  return logits;
}

}  // namespace

TEST_CASE("plain resblock formula") {
  Rng rng(1);
  const int d = 4;
  Tensor h = Tensor::randn({1, d}, rng, 1.0f);

  SUBCASE("zero weights reduce to silu(h) under the default variant") {
    ResblockParamsT<float> p;
    p.W = Tensor::zeros({d, d});
    p.b = Tensor::zeros({d});
    Tensor out = resblock_forward(p, h, ResblockVariant::Paper);
    for (int c = 0; c < d; ++c)
      CHECK(double(out.data()[c]) ==
            doctest::Approx(oracle::silu(double(h.data()[c]))).epsilon(1e-6));

    Tensor canon = resblock_forward(p, h, ResblockVariant::Canonical);
    for (int c = 0; c < d; ++c) CHECK(canon.data()[c] == h.data()[c]);
  }

  SUBCASE("W = -I cancels the residual") {
    ResblockParamsT<float> p;
    p.W = Tensor::zeros({d, d});
    for (int i = 0; i < d; ++i) p.W.data()[i * d + i] = -1.0f;
    p.b = Tensor::zeros({d});
    Tensor out = resblock_forward(p, h, ResblockVariant::Paper);
    for (int c = 0; c < d; ++c) CHECK(out.data()[c] == 0.0f);
  }

  SUBCASE("random case matches the scalar oracle") {
    ResblockParamsT<float> p;
    p.W = Tensor::randn({d, d}, rng, 0.7f);
    p.b = Tensor::randn({d}, rng, 0.7f);
    Tensor out = resblock_forward(p, h, ResblockVariant::Paper);
    std::vector<double> hd(h.data(), h.data() + d);
    std::vector<double> Wd(p.W.data(), p.W.data() + d * d);
    std::vector<double> bd(p.b.data(), p.b.data() + d);
    const auto ref = oracle::resblock_paper(hd, Wd, bd);
    for (int c = 0; c < d; ++c)
      CHECK(double(out.data()[c]) == doctest::Approx(ref[std::size_t(c)]).epsilon(1e-6));
  }
}

TEST_CASE("special resblock formula") {
  Rng rng(2);
  const int d = 4;
  Tensor h = Tensor::randn({1, d}, rng, 1.0f);

  auto make_special = [&](bool zero) {
    ResblockParamsT<float> p;
    p.special = true;
    p.W = zero ? Tensor::zeros({2 * d, 2 * d})
               : Tensor::randn({2 * d, 2 * d}, rng, 0.5f);
    p.b = zero ? Tensor::zeros({2 * d}) : Tensor::randn({2 * d}, rng, 0.5f);
    p.down = Tensor::zeros({2 * d, d});
    for (int i = 0; i < d; ++i) p.down.data()[i * d + i] = 1.0f;
    return p;
  };

  SUBCASE("identity construction: zero W, select-first-half projection") {
    auto p = make_special(true);
    Tensor out = special_resblock_forward(p, h, h, ResblockVariant::Paper);
    for (int c = 0; c < d; ++c)
      CHECK(double(out.data()[c]) ==
            doctest::Approx(oracle::silu(double(h.data()[c]))).epsilon(1e-6));
    CHECK(out.dim(1) == d);
  }

  SUBCASE("random case matches the scalar oracle") {
    auto p = make_special(false);
    for (std::int64_t i = 0; i < p.down.numel(); ++i)
      p.down.data()[i] = rng.normal() * 0.5f;
    Tensor hp = Tensor::randn({1, d}, rng, 1.0f);
    Tensor out = special_resblock_forward(p, h, hp, ResblockVariant::Paper);
    std::vector<double> hd(h.data(), h.data() + d);
    std::vector<double> hpd(hp.data(), hp.data() + d);
    std::vector<double> Wd(p.W.data(), p.W.data() + 4 * d * d);
    std::vector<double> bd(p.b.data(), p.b.data() + 2 * d);
    std::vector<double> dd(p.down.data(), p.down.data() + 2 * d * d);
    const auto ref = oracle::special_resblock_paper(hd, hpd, Wd, bd, dd);
    for (int c = 0; c < d; ++c)
      CHECK(double(out.data()[c]) == doctest::Approx(ref[std::size_t(c)]).epsilon(1e-6));
  }
}

TEST_CASE("stack forward semantics") {
  Rng rng(3);
  const int d = 8, V = 12;

  SUBCASE("medusa heads with identical weights produce identical outputs") {
    Tensor lm = Tensor::randn({d, V}, rng, 0.5f);
    HeadStack stack = init_head_stack(
        cfg_for(Paradigm::Medusa, 2, 3, ResblockVariant::Paper), d, V, lm, rng);
    Tensor h = Tensor::randn({1, d}, rng, 1.0f);
    auto logits = head_stack_forward(stack, h);
    CHECK(logits[0].vec() == logits[1].vec());
  }

  SUBCASE("cerberus head 0 equals the medusa head 0 for identical weights") {
    HeadStack med = random_stack(Paradigm::Medusa, 3, 3, d, V, rng);
    HeadStack cer = random_stack(Paradigm::Cerberus, 3, 3, d, V, rng);
    for (int j = 0; j < 3; ++j) {
      cer.blocks[0][std::size_t(j)].W = med.blocks[0][std::size_t(j)].W;
      cer.blocks[0][std::size_t(j)].b = med.blocks[0][std::size_t(j)].b;
    }
    cer.fc[0] = med.fc[0];
    Tensor h = Tensor::randn({1, d}, rng, 1.0f);
    auto lm = head_stack_forward(med, h);
    auto lc = head_stack_forward(cer, h);
    CHECK(lm[0].vec() == lc[0].vec());
  }

  SUBCASE("medusa independence / cerberus tap") {
    Tensor h = Tensor::randn({1, d}, rng, 1.0f);

    HeadStack med = random_stack(Paradigm::Medusa, 3, 2, d, V, rng);
    auto before = head_stack_forward(med, h);
    med.blocks[1][0].W.data()[3] += 0.5f;  // perturb head 1
    auto after = head_stack_forward(med, h);
    CHECK(before[0].vec() == after[0].vec());
    CHECK(before[2].vec() == after[2].vec());
    CHECK(before[1].vec() != after[1].vec());

    HeadStack cer = random_stack(Paradigm::Cerberus, 3, 2, d, V, rng);
    auto cbefore = head_stack_forward(cer, h);
    cer.blocks[1][0].W.data()[3] += 0.5f;  // head 1 depth 0 feeds head 2's tap
    auto cafter = head_stack_forward(cer, h);
    CHECK(cbefore[2].vec() != cafter[2].vec());
    CHECK(cbefore[0].vec() == cafter[0].vec());
  }
}

TEST_CASE("wavefront schedule shape and validation") {
  SUBCASE("4 heads, 4 blocks, tap depth 1: 4 steps of 4 parallel blocks") {
    auto plan = wavefront_schedule(
        cfg_for(Paradigm::Cerberus, 4, 4, ResblockVariant::Paper));
    CHECK(plan.n_steps == 4);
    for (const auto& step : plan.steps) CHECK(step.size() == 4);
  }

  SUBCASE("step count is R for every head count (not H*R)") {
    for (int H = 1; H <= 4; ++H)
      for (int R = 1; R <= 4; ++R) {
        auto plan = wavefront_schedule(
            cfg_for(Paradigm::Cerberus, H, R, ResblockVariant::Paper));
        CHECK(plan.n_steps == R);
        std::size_t blocks = 0;
        for (const auto& s : plan.steps) blocks += s.size();
        CHECK(blocks == std::size_t(H * R));
      }
  }

  SUBCASE("plans with forward-crossing dependencies are rejected") {
    auto cfg = cfg_for(Paradigm::Cerberus, 2, 3, ResblockVariant::Paper);
    auto plan = wavefront_schedule(cfg);
    std::swap(plan.steps[0], plan.steps[1]);  // run depth 1 before depth 0
    CHECK_THROWS_AS(validate_plan(plan, cfg), ConfigError);
  }
}

TEST_CASE("wavefront equals sequential execution bitwise") {
  Rng rng(4);
  const int d = 32, V = 16;
  for (int H = 1; H <= 4; ++H)
    for (int R = 1; R <= 4; ++R)
      for (int draw = 0; draw < 3; ++draw) {
        HeadStack stack = random_stack(Paradigm::Cerberus, H, R, d, V, rng);
        Tensor h = Tensor::randn({2, d}, rng, 1.0f);
        auto wf = head_stack_forward(stack, h);
        auto sq = sequential_oracle(stack, h);
        auto threaded = head_stack_forward(stack, h, 2);
        for (int i = 0; i < H; ++i) {
          CHECK(wf[std::size_t(i)].vec() == sq[std::size_t(i)].vec());
          CHECK(wf[std::size_t(i)].vec() == threaded[std::size_t(i)].vec());
        }
      }
}

TEST_CASE("cerberus parameter count exceeds medusa by the special deltas") {
  Rng rng(5);
  const int d = 16, V = 8;
  for (int H = 1; H <= 4; ++H) {
    HeadStack med = random_stack(Paradigm::Medusa, H, 3, d, V, rng);
    HeadStack cer = random_stack(Paradigm::Cerberus, H, 3, d, V, rng);
    // Each special block swaps a d-width block (d^2 + d params) for a
    // 2d-width one plus a down-projection ((2d)^2 + 2d + 2d*d params).
    const std::int64_t delta = 5LL * d * d + d;
    CHECK(cer.param_count() - med.param_count() == (H - 1) * delta);
  }
}

TEST_CASE("warm start: canonical variant reproduces the LM head exactly") {
  Rng rng(6);
  const int d = 8, V = 12;
  Tensor lm = Tensor::randn({d, V}, rng, 0.6f);
  for (auto paradigm : {Paradigm::Medusa, Paradigm::Cerberus}) {
    HeadStack stack = init_head_stack(
        cfg_for(paradigm, 3, 3, ResblockVariant::Canonical), d, V, lm, rng);
    Tensor h = Tensor::randn({2, d}, rng, 1.0f);
    auto logits = head_stack_forward(stack, h);
    Tensor direct = matmul(h, lm);
    for (const auto& l : logits) CHECK(l.vec() == direct.vec());
  }
}

TEST_CASE("heads checkpoint round-trip") {
  Rng rng(7);
  HeadStack stack = random_stack(Paradigm::Cerberus, 3, 2, 16, 24, rng);
  const std::string path =
      (std::filesystem::temp_directory_path() / "cerberus_heads_test.ckpt")
          .string();
  heads_to_checkpoint(stack, 1234).save(path);
  HeadStack loaded = heads_from_checkpoint(Checkpoint::load(path));
  CHECK(loaded.cfg.paradigm == Paradigm::Cerberus);
  CHECK(loaded.param_count() == stack.param_count());
  Tensor h = Tensor::randn({1, 16}, rng, 1.0f);
  auto a = head_stack_forward(stack, h);
  auto b = head_stack_forward(loaded, h);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].vec() == b[i].vec());
  std::filesystem::remove(path);
}

TEST_CASE("top-k ids are deterministic under ties") {
  std::vector<float> logits{1.0f, 3.0f, 3.0f, 0.5f, 3.0f};
  const auto ids = topk_ids(logits.data(), 5, 4);
  CHECK(ids == std::vector<int>{1, 2, 4, 0});
}
