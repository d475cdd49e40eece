#include "cerberus/heads.hpp"

#include <algorithm>
#include <numeric>

namespace cerberus {

Paradigm paradigm_from_string(const std::string& s) {
  if (s == "medusa") return Paradigm::Medusa;
  if (s == "cerberus") return Paradigm::Cerberus;
  throw ConfigError("unknown head paradigm: " + s);
}

std::string to_string(Paradigm p) {
  return p == Paradigm::Medusa ? "medusa" : "cerberus";
}

ResblockVariant resblock_variant_from_string(const std::string& s) {
  if (s == "paper") return ResblockVariant::Paper;
  if (s == "canonical") return ResblockVariant::Canonical;
  throw ConfigError("unknown resblock variant: " + s);
}

std::string to_string(ResblockVariant v) {
  return v == ResblockVariant::Paper ? "paper" : "canonical";
}

nlohmann::json HeadConfig::to_json() const {
  return {{"paradigm", cerberus::to_string(paradigm)},
          {"n_heads", n_heads},
          {"resblocks", resblocks},
          {"special_pos", special_pos},
          {"top_k", top_k},
          {"resblock_variant", cerberus::to_string(variant)}};
}

HeadConfig HeadConfig::from_json(const nlohmann::json& j) {
  HeadConfig c;
  c.paradigm = paradigm_from_string(j.at("paradigm").get<std::string>());
  c.n_heads = j.at("n_heads").get<int>();
  c.resblocks = j.at("resblocks").get<int>();
  c.special_pos = j.at("special_pos").get<int>();
  c.top_k = j.at("top_k").get<int>();
  c.variant =
      resblock_variant_from_string(j.at("resblock_variant").get<std::string>());
  c.validate();
  return c;
}

HeadStack init_head_stack(const HeadConfig& cfg, int d_model, int vocab,
                          const Tensor& lm_head, Rng& rng) {
  (void)rng;
  cfg.validate();
  check_shape(lm_head.rank() == 2 && int(lm_head.dim(0)) == d_model &&
                  int(lm_head.dim(1)) == vocab,
              "lm_head must be [d x V]");
  HeadStack stack;
  stack.cfg = cfg;
  stack.d = d_model;
  stack.vocab = vocab;
  stack.blocks.resize(static_cast<std::size_t>(cfg.n_heads));
  for (int i = 0; i < cfg.n_heads; ++i) {
    for (int j = 0; j < cfg.resblocks; ++j) {
      ResblockParamsT<float> blk;
      blk.special = cfg.head_has_special(i) && j == cfg.special_pos;
      const int w = blk.special ? 2 * d_model : d_model;
      blk.W = Tensor::zeros({w, w}, true);
      blk.b = Tensor::zeros({w}, true);
      if (blk.special) {
        // Down-projection starts as "select the first half", i.e. pass h_i
        // through untouched.
        blk.down = Tensor::zeros({2 * d_model, d_model}, true);
        for (int r = 0; r < d_model; ++r)
          blk.down.data()[std::size_t(r) * d_model + r] = 1.0f;
      }
      stack.blocks[std::size_t(i)].push_back(std::move(blk));
    }
    Tensor f = Tensor::from(lm_head.shape(), lm_head.vec(), true);
    stack.fc.push_back(std::move(f));
  }
  return stack;
}

Checkpoint heads_to_checkpoint(const HeadStack& stack,
                               std::uint64_t backbone_hash) {
  Checkpoint ck;
  ck.kind = "heads";
  ck.config = stack.cfg.to_json();
  ck.config["d_model"] = stack.d;
  ck.config["vocab_size"] = stack.vocab;
  ck.config["backbone_hash"] = backbone_hash;
  for (auto& [name, t] : named_params(const_cast<HeadStack&>(stack)))
    ck.add(name, *t);
  return ck;
}

HeadStack heads_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "heads") throw IoError("checkpoint is not a heads checkpoint");
  HeadConfig cfg = HeadConfig::from_json(ck.config);
  const int d = ck.config.at("d_model").get<int>();
  const int V = ck.config.at("vocab_size").get<int>();
  Tensor dummy_lh = Tensor::zeros({d, V});
  Rng rng(0);
  HeadStack stack = init_head_stack(cfg, d, V, dummy_lh, rng);
  for (auto& [name, t] : named_params(stack)) {
    const Tensor& src = ck.get(name);
    check_shape(src.shape() == t->shape(),
                "heads checkpoint shape mismatch for " + name);
    std::copy(src.vec().begin(), src.vec().end(), t->vec().begin());
  }
  return stack;
}

WavefrontPlan wavefront_schedule(const HeadConfig& cfg) {
  cfg.validate();
  WavefrontPlan plan;
  plan.n_steps = cfg.resblocks;
  plan.steps.resize(static_cast<std::size_t>(cfg.resblocks));
  for (int depth = 0; depth < cfg.resblocks; ++depth)
    for (int head = 0; head < cfg.n_heads; ++head) {
      BlockTask t;
      t.head = head;
      t.depth = depth;
      t.special = cfg.head_has_special(head) && depth == cfg.special_pos;
      plan.steps[std::size_t(depth)].push_back(t);
    }
  validate_plan(plan, cfg);
  return plan;
}

void validate_plan(const WavefrontPlan& plan, const HeadConfig& cfg) {
  if (plan.n_steps != cfg.resblocks)
    throw ConfigError("wavefront plan must have exactly R steps");
  std::vector<std::vector<bool>> done(
      std::size_t(cfg.n_heads), std::vector<bool>(static_cast<std::size_t>(cfg.resblocks)));
  int total = 0;
  for (int step = 0; step < plan.n_steps; ++step) {
    for (const auto& t : plan.steps[std::size_t(step)]) {
      if (t.depth != step)
        throw ConfigError("wavefront step may only run blocks of its depth");
      // Own input and (for special blocks) the tapped input both live at
      // depth-1; anything else would cross forward in depth.
      if (t.depth > 0 && !done[std::size_t(t.head)][std::size_t(t.depth - 1)])
        throw ConfigError("block scheduled before its own input");
      if (t.special) {
        if (t.head == 0) throw ConfigError("head 0 cannot have a special block");
        if (t.depth > 0 &&
            !done[std::size_t(t.head - 1)][std::size_t(t.depth - 1)])
          throw ConfigError("special block scheduled before its tap");
      }
      ++total;
    }
    for (const auto& t : plan.steps[std::size_t(step)])
      done[std::size_t(t.head)][std::size_t(t.depth)] = true;
  }
  if (total != cfg.n_heads * cfg.resblocks)
    throw ConfigError("wavefront plan must cover every block exactly once");
}

std::vector<int> topk_ids(const float* logits, int vocab, int k) {
  std::vector<int> idx(static_cast<std::size_t>(vocab));
  std::iota(idx.begin(), idx.end(), 0);
  const int kk = std::min(k, vocab);
  std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(),
                    [&](int a, int b) {
                      if (logits[a] != logits[b]) return logits[a] > logits[b];
                      return a < b;
                    });
  idx.resize(static_cast<std::size_t>(kk));
  return idx;
}

}  // namespace cerberus
