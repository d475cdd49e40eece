#include <doctest.h>

#include <cmath>

#include "cerberus/trainer.hpp"
#include "support/oracles.hpp"

using namespace cerberus;

namespace {

BackboneConfig micro_cfg(int d = 16, int V = 32) {
  BackboneConfig c;
  c.vocab_size = V;
  c.d_model = d;
  c.n_layers = 1;
  c.n_attn_heads = 2;
  c.max_context = 64;
  c.ffn_mult = 2;
  return c;
}

Corpus micro_corpus(std::uint64_t seed, std::size_t n, int vocab) {
  Rng rng(seed);
  std::string bytes(n, '\0');
  for (auto& b : bytes) b = char('a' + int(rng.below(std::uint64_t(vocab / 4))));
  Corpus c = corpus_from_bytes(bytes, 0.2);
  for (auto& t : c.tokens) t %= vocab;
  return c;
}

TrainConfig micro_train(int steps) {
  TrainConfig t;
  t.lr = 1e-3;
  t.batch = 2;
  t.steps = steps;
  t.seq_len = 16;
  t.warmup = 2;
  t.eval_windows = 4;
  t.quiet = true;
  t.seed = 7;
  return t;
}

}  // namespace

TEST_CASE("initial loss is near ln V and one step moves it") {
  Rng rng(1);
  BackboneModel m = BackboneModel::init(micro_cfg(), rng);
  Corpus corpus = micro_corpus(2, 4096, m.cfg.vocab_size);
  TrainConfig tc = micro_train(1);

  const double init = eval_backbone_loss(m, corpus, tc);
  CHECK(init == doctest::Approx(std::log(32.0)).epsilon(0.05));

  TrainStats stats = train_backbone(m, corpus, tc);
  CHECK(stats.init_eval_loss == doctest::Approx(init).epsilon(1e-6));
  CHECK(stats.final_eval_loss != stats.init_eval_loss);
}

TEST_CASE("a short run reduces held-out loss") {
  Rng rng(3);
  BackboneModel m = BackboneModel::init(micro_cfg(), rng);
  Corpus corpus = micro_corpus(4, 8192, m.cfg.vocab_size);
  TrainConfig tc = micro_train(60);
  TrainStats stats = train_backbone(m, corpus, tc);
  CHECK(stats.final_eval_loss < stats.init_eval_loss);
}

TEST_CASE("head training freezes the backbone bit-for-bit") {
  Rng rng(5);
  BackboneModel m = BackboneModel::init(micro_cfg(), rng);
  Corpus corpus = micro_corpus(6, 8192, m.cfg.vocab_size);
  TrainConfig tc = micro_train(8);

  HeadConfig hc;
  hc.paradigm = Paradigm::Cerberus;
  hc.n_heads = 3;
  hc.resblocks = 2;
  hc.special_pos = 1;
  hc.top_k = 4;
  m.set_requires_grad(false);
  HeadStack stack = init_head_stack(hc, m.cfg.d_model, m.cfg.vocab_size,
                                    m.lm_head, rng);

  const std::uint64_t before = m.weights_hash();
  TrainStats stats = train_heads(stack, m, corpus, tc);
  CHECK(m.weights_hash() == before);
  CHECK(stats.final_eval_loss < stats.init_eval_loss);

  SUBCASE("training requires a frozen backbone") {
    m.set_requires_grad(true);
    CHECK_THROWS_AS(train_heads(stack, m, corpus, tc), ConfigError);
    m.set_requires_grad(false);
  }
}

TEST_CASE("warm start: initial head loss equals the LM head's offset loss") {
  // Canonical resblocks are exact identities at zero init, so head i starts
  // out scoring exactly like the LM head evaluated at offset i+2.
  Rng rng(7);
  BackboneModel m = BackboneModel::init(micro_cfg(), rng);
  Corpus corpus = micro_corpus(8, 8192, m.cfg.vocab_size);
  TrainConfig tc = micro_train(1);
  m.set_requires_grad(false);

  HeadConfig hc;
  hc.paradigm = Paradigm::Cerberus;
  hc.n_heads = 3;
  hc.resblocks = 2;
  hc.special_pos = 1;
  hc.top_k = 4;
  hc.variant = ResblockVariant::Canonical;
  HeadStack stack = init_head_stack(hc, m.cfg.d_model, m.cfg.vocab_size,
                                    m.lm_head, rng);

  const auto head_losses = eval_head_losses(stack, m, corpus, tc);

  // LM-head cross entropy against the same offset targets, over the same
  // evenly spaced held-out windows the evaluator uses.
  const int W = tc.seq_len + hc.n_heads + 1;
  const std::size_t span = corpus.eval_size() - std::size_t(W);
  std::vector<double> expected(3, 0.0);
  for (int w = 0; w < tc.eval_windows; ++w) {
    const std::size_t s =
        corpus.split + span * std::size_t(w) / std::size_t(tc.eval_windows);
    std::vector<int> window(corpus.tokens.begin() + long(s),
                            corpus.tokens.begin() + long(s + std::size_t(W)));
    std::vector<int> inputs(window.begin(), window.begin() + tc.seq_len);
    auto out = train_forward(m, inputs);
    for (int i = 0; i < 3; ++i)
      expected[std::size_t(i)] += double(
          cross_entropy_mean(out.logits, head_targets(window, tc.seq_len, i))
              .data()[0]);
  }
  for (int i = 0; i < 3; ++i)
    CHECK(head_losses[std::size_t(i)] ==
          doctest::Approx(expected[std::size_t(i)] / tc.eval_windows)
              .epsilon(1e-4));
}

TEST_CASE("single-head loss weights train exactly the reachable blocks") {
  Rng rng(9);
  BackboneModel m = BackboneModel::init(micro_cfg(), rng);
  m.set_requires_grad(false);
  Corpus corpus = micro_corpus(10, 4096, m.cfg.vocab_size);

  auto run_one_step = [&](Paradigm paradigm, int only_head) {
    HeadConfig hc;
    hc.paradigm = paradigm;
    hc.n_heads = 3;
    hc.resblocks = 2;
    hc.special_pos = 1;
    hc.top_k = 4;
    Rng hrng(11);
    HeadStack stack = init_head_stack(hc, m.cfg.d_model, m.cfg.vocab_size,
                                      m.lm_head, hrng);
    // Nudge weights away from zero so gradients can reach taps.
    for (auto& [name, t] : named_params(stack))
      for (std::int64_t i = 0; i < t->numel(); ++i)
        t->data()[i] += 0.01f * float((i % 7) - 3);

    std::vector<std::vector<float>> before;
    for (auto& [name, t] : named_params(stack)) before.push_back(t->vec());

    const int W = 16 + hc.n_heads + 1;
    std::vector<int> window(corpus.tokens.begin(),
                            corpus.tokens.begin() + W);
    std::vector<int> inputs(window.begin(), window.begin() + 16);
    auto out = train_forward(m, inputs);
    std::vector<std::vector<int>> targets;
    std::vector<double> lambdas(3, 0.0);
    lambdas[std::size_t(only_head)] = 1.0;
    for (int i = 0; i < 3; ++i) targets.push_back(head_targets(window, 16, i));
    Tensor loss = head_training_loss(stack, out.h_last, targets, lambdas);
    backward(loss);

    std::vector<Tensor*> params;
    for (auto& [name, t] : named_params(stack)) params.push_back(t);
    AdamState adam(params);
    adam_step(params, adam, 0.01f);

    std::vector<std::string> changed;
    std::size_t idx = 0;
    for (auto& [name, t] : named_params(stack)) {
      if (t->vec() != before[idx]) changed.push_back(name);
      ++idx;
    }
    return changed;
  };

  SUBCASE("medusa: only head j changes") {
    const auto changed = run_one_step(Paradigm::Medusa, 1);
    for (const auto& name : changed)
      CHECK(name.substr(0, 7) == "head.1.");
    CHECK(!changed.empty());
  }

  SUBCASE("cerberus: head j plus the tapped block of head j-1 change") {
    const auto changed = run_one_step(Paradigm::Cerberus, 1);
    bool tapped_block_changed = false;
    for (const auto& name : changed) {
      const bool own = name.substr(0, 7) == "head.1.";
      const bool tap = name.substr(0, 14) == "head.0.block.0";
      CHECK((own || tap));
      if (tap) tapped_block_changed = true;
    }
    CHECK(tapped_block_changed);
  }
}

TEST_CASE("full head loss gradient matches finite differences (d=8, V=16)") {
  Rng rng(13);
  BackboneConfig bc = micro_cfg(8, 16);
  BackboneModel m = BackboneModel::init(bc, rng);
  m.set_requires_grad(false);

  HeadConfig hc;
  hc.paradigm = Paradigm::Cerberus;
  hc.n_heads = 3;
  hc.resblocks = 2;
  hc.special_pos = 1;
  hc.top_k = 4;
  HeadStack stack32 =
      init_head_stack(hc, bc.d_model, bc.vocab_size, m.lm_head, rng);
  for (auto& [name, t] : named_params(stack32))
    for (std::int64_t i = 0; i < t->numel(); ++i)
      t->data()[i] += rng.normal() * 0.3f;

  // Hidden states from the frozen backbone; constants for the check.
  std::vector<int> inputs{1, 5, 9, 2, 7, 3};
  auto h32 = train_forward(m, inputs).h_last;

  auto stack = cast_stack<double>(stack32);
  auto h = h32.cast<double>();
  std::vector<std::vector<int>> targets;
  for (int i = 0; i < 3; ++i)
    targets.push_back({2, 4, 6, 8, 10, 12});
  const std::vector<double> lambdas{1.0, 0.8, 0.64};

  std::vector<TensorT<double>*> params;
  for (auto& [name, t] : named_params(stack)) params.push_back(t);
  auto loss_fn = [&]() {
    return head_training_loss(stack, h, targets, lambdas);
  };
  auto res = oracle::grad_check(params, loss_fn, 1e-3, 60);
  CHECK(res.checked > 100);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("top-k accuracy table is cumulative and bounded") {
  Rng rng(15);
  BackboneModel m = BackboneModel::init(micro_cfg(), rng);
  m.set_requires_grad(false);
  Corpus corpus = micro_corpus(16, 8192, m.cfg.vocab_size);
  TrainConfig tc = micro_train(1);

  HeadConfig hc;
  hc.paradigm = Paradigm::Medusa;
  hc.n_heads = 2;
  hc.resblocks = 1;
  hc.top_k = 4;
  HeadStack stack = init_head_stack(hc, m.cfg.d_model, m.cfg.vocab_size,
                                    m.lm_head, rng);

  // k' = V covers the whole vocabulary, so accuracy must reach 1.
  HeadEvalTable full = eval_head_topk(stack, m, corpus, tc, m.cfg.vocab_size);
  for (int h = 0; h < 2; ++h) {
    const auto& acc = full.topk_acc[std::size_t(h)];
    CHECK(acc.back() == doctest::Approx(1.0));
    for (std::size_t k = 1; k < acc.size(); ++k) CHECK(acc[k] >= acc[k - 1]);
    for (double a : acc) {
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
    }
  }
  CHECK(full.positions > 0);
}

TEST_CASE("lr schedule warms up then decays to the floor") {
  TrainConfig tc = micro_train(100);
  tc.lr = 1.0;
  tc.warmup = 10;
  tc.min_lr_frac = 0.1;
  CHECK(lr_at(tc, 0) == doctest::Approx(0.1));
  CHECK(lr_at(tc, 9) == doctest::Approx(1.0));
  CHECK(lr_at(tc, 99) < 0.2);
  CHECK(lr_at(tc, 99) >= 0.1 - 1e-9);
}

TEST_CASE("head_targets slices the right offsets") {
  std::vector<int> window{10, 11, 12, 13, 14, 15, 16, 17};
  // seq_len 4, head 0 predicts offset +2.
  CHECK(head_targets(window, 4, 0) == std::vector<int>{12, 13, 14, 15});
  CHECK(head_targets(window, 4, 2) == std::vector<int>{14, 15, 16, 17});
  CHECK_THROWS_AS(head_targets(window, 4, 3), ShapeError);
}
