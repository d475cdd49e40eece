#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "cerberus/kernels.hpp"
#include "cerberus/tree.hpp"

using namespace cerberus;

namespace {

BackboneModel tiny_model(std::uint64_t seed = 42) {
  BackboneConfig c;
  c.vocab_size = 32;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_attn_heads = 2;
  c.max_context = 96;
  c.ffn_mult = 2;
  Rng rng(seed);
  BackboneModel m = BackboneModel::init(c, rng);
  m.set_requires_grad(false);
  return m;
}

TemplateSet make_set(std::vector<PathTemplate> templates, int k) {
  TemplateSet s;
  s.templates = std::move(templates);
  s.top_k = k;
  std::sort(s.templates.begin(), s.templates.end());
  s.validate();
  return s;
}

}  // namespace

TEST_CASE("template validation") {
  CHECK_THROWS_AS(make_set({{0, 1}}, 2), ConfigError);      // missing prefix
  CHECK_THROWS_AS(make_set({{0}, {2}}, 2), ConfigError);    // rank >= k
  CHECK_THROWS_AS(make_set({{0}, {0}}, 2), ConfigError);    // duplicate
  CHECK_THROWS_AS(make_set({}, 2), ConfigError);            // empty
  CHECK_NOTHROW(make_set({{0}, {1}, {0, 0}, {0, 1}}, 2));
}

TEST_CASE("full template space follows the count law") {
  auto count = [](int H, int k) {
    std::int64_t n = 0, p = 1;
    for (int j = 0; j < H; ++j) {
      p *= k;
      n += p;
    }
    return n;
  };
  CHECK(TemplateSet::full(2, 3).size() == std::size_t(count(2, 3)));
  CHECK(TemplateSet::full(3, 2).size() == std::size_t(count(3, 2)));
  CHECK(TemplateSet::full(4, 10).size() == 11110);
  TemplateSet f = TemplateSet::full(3, 3);
  CHECK_NOTHROW(f.validate());
}

TEST_CASE("select_templates") {
  const auto uniform = uniform_calibration(4, 10);

  SUBCASE("budget 1 picks the single rank-0 path") {
    TemplateSet s = select_templates(1, 4, 10, uniform);
    REQUIRE(s.size() == 1);
    CHECK(s.templates[0] == PathTemplate{0});
  }

  SUBCASE("budget equal to the full space returns the full set") {
    TemplateSet s = select_templates(14, 3, 2, uniform_calibration(3, 2));
    CHECK(s.size() == 14);
    CHECK(s.templates == TemplateSet::full(3, 2).templates);
  }

  SUBCASE("budget beyond the full space clamps") {
    TemplateSet s = select_templates(100, 2, 3, uniform_calibration(2, 3));
    CHECK(s.size() == 12);
  }

  SUBCASE("reference budgets are prefix-closed and exactly sized") {
    for (int budget : {63, 120, 150}) {
      TemplateSet s = select_templates(budget, 4, 10, uniform);
      CHECK(s.size() == std::size_t(budget));
      CHECK_NOTHROW(s.validate());
      CHECK(s.max_depth() <= 4);
    }
  }

  SUBCASE("uniform calibration fills shallow depths first") {
    TemplateSet s = select_templates(63, 4, 10, uniform);
    int depth1 = 0, depth2 = 0;
    for (const auto& t : s.templates) {
      if (t.size() == 1) ++depth1;
      if (t.size() == 2) ++depth2;
    }
    CHECK(depth1 == 10);
    CHECK(depth2 == 53);
  }

  SUBCASE("calibration skew steers the selection") {
    auto calib = uniform_calibration(2, 2);
    calib[0][0] = 0.9;   // rank 0 of head 0 dominates
    calib[0][1] = 0.05;
    calib[1][0] = 0.5;
    calib[1][1] = 0.3;
    TemplateSet s = select_templates(3, 2, 2, calib);
    // (0) p=.9 first, then its child (0,0) p=.45 beats (1) p=.05.
    CHECK(s.templates == std::vector<PathTemplate>{{0}, {0, 0}, {0, 1}});
  }
}

TEST_CASE("template file round-trip and validation on load") {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string good = (dir / "templates_good.json").string();
  const std::string bad = (dir / "templates_bad.json").string();

  TemplateSet s = make_set({{0}, {1}, {0, 0}, {0, 1}}, 2);
  s.save(good);
  TemplateSet loaded = TemplateSet::load(good, 2);
  CHECK(loaded.templates == s.templates);

  {
    std::ofstream f(bad);
    f << "[[1,0]]\n";  // prefix (1) missing
  }
  CHECK_THROWS_AS(TemplateSet::load(bad, 2), ConfigError);
  std::filesystem::remove(good);
  std::filesystem::remove(bad);
}

TEST_CASE("build_tree") {
  SUBCASE("hand-enumerated prefixes") {
    TemplateSet s = make_set({{0}, {1}, {0, 0}, {0, 1}}, 2);
    const std::vector<std::vector<int>> topk{{7, 9}, {3, 5}};
    CandidateTree t = build_tree(s, topk);
    REQUIRE(t.size() == 4);
    // Lexicographic node order: (0), (0,0), (0,1), (1)
    CHECK(t.nodes[0].token == 7);
    CHECK(t.nodes[0].depth == 1);
    CHECK(t.nodes[0].parent == -1);
    CHECK(t.nodes[1].token == 3);
    CHECK(t.nodes[1].parent == 0);
    CHECK(t.nodes[2].token == 5);
    CHECK(t.nodes[2].parent == 0);
    CHECK(t.nodes[3].token == 9);
    CHECK(t.nodes[3].parent == -1);
    CHECK(t.nodes[3].children.empty());  // (1) is a leaf
    CHECK(t.roots == std::vector<int>{0, 3});
  }

  SUBCASE("full space node count") {
    TemplateSet s = TemplateSet::full(3, 4);
    std::vector<std::vector<int>> topk(3, std::vector<int>{1, 2, 3, 4});
    CHECK(build_tree(s, topk).size() == 4 + 16 + 64);
  }

  SUBCASE("single template tree") {
    TemplateSet s = make_set({{0}}, 1);
    CandidateTree t = build_tree(s, {{5}});
    CHECK(t.size() == 1);
    const auto mask = t.ancestor_mask();
    CHECK(mask == std::vector<std::uint8_t>{1});
  }

  SUBCASE("missing candidates raise a config error") {
    TemplateSet s = make_set({{0}, {0, 0}}, 1);
    CHECK_THROWS_AS(build_tree(s, {{5}}), ConfigError);
  }

  SUBCASE("ancestor mask is lower-triangular in node order") {
    TemplateSet s = TemplateSet::full(3, 2);
    std::vector<std::vector<int>> topk(3, std::vector<int>{1, 2});
    CandidateTree t = build_tree(s, topk);
    const auto mask = t.ancestor_mask();
    for (int i = 0; i < t.size(); ++i)
      for (int j = i + 1; j < t.size(); ++j)
        CHECK(mask[std::size_t(i) * t.size() + j] == 0);
  }
}

TEST_CASE("verify walks greedily against backbone argmax") {
  BackboneModel m = tiny_model();
  Rng rng(9);

  // Committed context with a pending root token.
  std::vector<int> context{1, 2, 3, 4, 5};
  KvCache cache(m.cfg);
  ForwardOutput pre = forward_causal(
      m, cache, std::vector<int>(context.begin(), context.end() - 1));
  const int root = context.back();

  // Reference greedy continuation after the root.
  std::vector<int> greedy;
  {
    KvCache c2(m.cfg);
    forward_causal(m, c2, std::vector<int>(context.begin(), context.end() - 1));
    std::vector<int> cur{root};
    for (int i = 0; i < 4; ++i) {
      ForwardOutput o = forward_causal(m, c2, cur);
      cur = {kern::argmax(o.logit_row(0), o.V)};
      greedy.push_back(cur[0]);
    }
  }

  SUBCASE("no candidate matches: zero accepted, bonus is the argmax") {
    // Tokens deliberately distinct from the greedy next token.
    std::vector<std::vector<int>> topk{{(greedy[0] + 1) % 32, (greedy[0] + 2) % 32}};
    TemplateSet s = make_set({{0}, {1}}, 2);
    CandidateTree tree = build_tree(s, topk);
    KvCache c = cache;
    VerifyResult res = verify(tree, m, c, root);
    CHECK(res.accepted.empty());
    CHECK(res.bonus_token == greedy[0]);
    CHECK(c.len == cache.len + 1);  // root row kept, branches dropped
  }

  SUBCASE("tree containing the greedy continuation accepts all of it") {
    std::vector<std::vector<int>> topk;
    for (int i = 0; i < 3; ++i)
      topk.push_back({greedy[std::size_t(i)], (greedy[std::size_t(i)] + 1) % 32});
    TemplateSet s = TemplateSet::full(3, 2);
    CandidateTree tree = build_tree(s, topk);
    KvCache c = cache;
    VerifyResult res = verify(tree, m, c, root);
    CHECK(res.accepted == std::vector<int>{greedy[0], greedy[1], greedy[2]});
    CHECK(res.bonus_token == greedy[3]);
    CHECK(c.len == cache.len + 4);
  }

  (void)pre;
  (void)rng;
}

TEST_CASE("batched tree forward equals per-path sequential forwards") {
  BackboneModel m = tiny_model(123);
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const int H = 1 + int(rng.below(3));
    const int k = 1 + int(rng.below(3));
    TemplateSet full = TemplateSet::full(H, k);
    // Random prefix-closed subset: keep a random count of the first nodes
    // in lexicographic order of a random full set, then re-validate.
    const int budget = 1 + int(rng.below(std::min<std::uint64_t>(14, full.size())));
    TemplateSet sub = select_templates(budget, H, k, uniform_calibration(H, k));

    std::vector<std::vector<int>> topk;
    for (int i = 0; i < H; ++i) {
      std::set<int> toks;
      while (int(toks.size()) < k) toks.insert(int(rng.below(32)));
      topk.emplace_back(toks.begin(), toks.end());
    }
    CandidateTree tree = build_tree(sub, topk);

    std::vector<int> prefix;
    for (int i = 0; i < 6; ++i) prefix.push_back(int(rng.below(32)));
    const int root = int(rng.below(32));

    KvCache cache(m.cfg);
    forward_causal(m, cache, prefix);
    const int L = cache.len;

    // Batched: replicate the verification forward without the walk.
    std::vector<int> tokens{root};
    std::vector<int> positions{L};
    AttentionMask mask;
    mask.rows = 1 + tree.size();
    mask.cols = L + mask.rows;
    mask.allow.assign(std::size_t(mask.rows) * mask.cols, 0);
    for (int c = 0; c <= L; ++c) mask.at(0, c) = 1;
    for (int i = 0; i < tree.size(); ++i) {
      tokens.push_back(tree.nodes[std::size_t(i)].token);
      positions.push_back(L + tree.nodes[std::size_t(i)].depth);
      for (int c = 0; c < L; ++c) mask.at(1 + i, c) = 1;
      mask.at(1 + i, L) = 1;
      for (int a : tree.root_path(i)) mask.at(1 + i, L + 1 + a) = 1;
    }
    KvCache batched = cache;
    ForwardOutput out = forward(m, batched, tokens, positions, mask);

    // Sequential oracle per node: fresh forward of prefix + root + path.
    for (int i = 0; i < tree.size(); ++i) {
      KvCache c2(m.cfg);
      forward_causal(m, c2, prefix);
      std::vector<int> path{root};
      for (int id : tree.root_path(i))
        path.push_back(tree.nodes[std::size_t(id)].token);
      ForwardOutput seq = forward_causal(m, c2, path);
      const int last = seq.T - 1;
      for (int v = 0; v < m.cfg.vocab_size; ++v) {
        CHECK(out.logit_row(1 + i)[v] ==
              doctest::Approx(seq.logit_row(last)[v]).epsilon(1e-4));
        CHECK(out.logit_row(1 + i)[v] == seq.logit_row(last)[v]);
      }
    }
  }
}
