#pragma once

#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cerberus/checkpoint.hpp"
#include "cerberus/common.hpp"
#include "cerberus/tensor.hpp"

namespace cerberus {

enum class Paradigm { Medusa, Cerberus };
enum class ResblockVariant { Paper, Canonical };

Paradigm paradigm_from_string(const std::string& s);
std::string to_string(Paradigm p);
ResblockVariant resblock_variant_from_string(const std::string& s);
std::string to_string(ResblockVariant v);

// Head i predicts the token at offset i+2 from the position whose hidden
// state it consumes (the LM head owns offset +1).
struct HeadConfig {
  Paradigm paradigm = Paradigm::Cerberus;
  int n_heads = 4;
  int resblocks = 4;
  int special_pos = 1;  // depth of the two-input block, Cerberus only
  int top_k = 10;
  ResblockVariant variant = ResblockVariant::Paper;

  void validate() const {
    if (n_heads < 1) throw ConfigError("need at least one decoding head");
    if (resblocks < 1) throw ConfigError("need at least one resblock");
    if (top_k < 1) throw ConfigError("top_k must be positive");
    // With a single block per head there is no interior depth to tap, so a
    // Cerberus stack degenerates to all-plain blocks.
    if (paradigm == Paradigm::Cerberus && resblocks >= 2 &&
        (special_pos < 1 || special_pos >= resblocks))
      throw ConfigError("special_pos must satisfy 1 <= s < resblocks");
  }

  bool head_has_special(int head) const {
    return paradigm == Paradigm::Cerberus && head >= 1 && resblocks >= 2;
  }

  nlohmann::json to_json() const;
  static HeadConfig from_json(const nlohmann::json& j);
};

// Plain block: d -> d affine plus residual. Special block: operates on
// Concat(h_i, h_prev) at width 2d, then a learned 2d -> d down-projection
// (no activation) restores head width.
template <class S>
struct ResblockParamsT {
  TensorT<S> W;     // [d x d] or [2d x 2d]
  TensorT<S> b;     // [d] or [2d]
  TensorT<S> down;  // [2d x d], special blocks only
  bool special = false;
};

template <class S>
struct HeadStackT {
  HeadConfig cfg;
  int d = 0;
  int vocab = 0;
  std::vector<std::vector<ResblockParamsT<S>>> blocks;  // [head][depth]
  std::vector<TensorT<S>> fc;                           // [head], [d x V]

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& head : blocks)
      for (const auto& blk : head) {
        n += blk.W.numel() + blk.b.numel();
        if (blk.special) n += blk.down.numel();
      }
    for (const auto& f : fc) n += f.numel();
    return n;
  }

  // Resblock executions triggered by one stack forward.
  int block_exec_count() const { return cfg.n_heads * cfg.resblocks; }
};

using HeadStack = HeadStackT<float>;

// Zero-init resblocks and LM-head-copied FC layers: under the canonical
// variant every head starts out computing exactly LH(h_last).
HeadStack init_head_stack(const HeadConfig& cfg, int d_model, int vocab,
                          const Tensor& lm_head, Rng& rng);

template <class S>
std::vector<std::pair<std::string, TensorT<S>*>> named_params(
    HeadStackT<S>& stack) {
  std::vector<std::pair<std::string, TensorT<S>*>> out;
  for (std::size_t i = 0; i < stack.blocks.size(); ++i) {
    for (std::size_t j = 0; j < stack.blocks[i].size(); ++j) {
      auto& blk = stack.blocks[i][j];
      const std::string base =
          "head." + std::to_string(i) + ".block." + std::to_string(j) + ".";
      out.emplace_back(base + "W", &blk.W);
      out.emplace_back(base + "b", &blk.b);
      if (blk.special) out.emplace_back(base + "down", &blk.down);
    }
    out.emplace_back("head." + std::to_string(i) + ".fc.W",
                     &stack.fc[i]);
  }
  return out;
}

Checkpoint heads_to_checkpoint(const HeadStack& stack,
                               std::uint64_t backbone_hash);
HeadStack heads_from_checkpoint(const Checkpoint& ck);

template <class S>
HeadStackT<S> cast_stack(const HeadStack& stack) {
  HeadStackT<S> out;
  out.cfg = stack.cfg;
  out.d = stack.d;
  out.vocab = stack.vocab;
  out.blocks.resize(stack.blocks.size());
  for (std::size_t i = 0; i < stack.blocks.size(); ++i)
    for (const auto& blk : stack.blocks[i]) {
      ResblockParamsT<S> c;
      c.W = blk.W.template cast<S>();
      c.b = blk.b.template cast<S>();
      if (blk.special) c.down = blk.down.template cast<S>();
      c.special = blk.special;
      out.blocks[i].push_back(std::move(c));
    }
  for (const auto& f : stack.fc) out.fc.push_back(f.template cast<S>());
  return out;
}

// ---------------------------------------------------------------------------
// Block forwards (batched over rows; n = 1 on the decode path)
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> resblock_forward(const ResblockParamsT<S>& p, const TensorT<S>& h,
                            ResblockVariant variant) {
  check_shape(!p.special, "plain forward called on a special block");
  TensorT<S> affine = add_bias(matmul(h, p.W), p.b);
  if (variant == ResblockVariant::Paper) return silu(add(affine, h));
  return add(h, silu(affine));
}

template <class S>
TensorT<S> special_resblock_forward(const ResblockParamsT<S>& p,
                                    const TensorT<S>& h_i,
                                    const TensorT<S>& h_prev,
                                    ResblockVariant variant) {
  check_shape(p.special, "special forward called on a plain block");
  TensorT<S> cat = concat_cols(h_i, h_prev);
  TensorT<S> affine = add_bias(matmul(cat, p.W), p.b);
  TensorT<S> core = variant == ResblockVariant::Paper
                        ? silu(add(affine, cat))
                        : add(cat, silu(affine));
  return matmul(core, p.down);
}

// ---------------------------------------------------------------------------
// Wavefront schedule
// ---------------------------------------------------------------------------

// Depth-synchronous execution plan: step t runs every head's depth-t block.
// A special block at depth s consumes only depth-(s-1) outputs, which a
// valid plan has already produced, so the step count is the block depth R
// no matter how many heads there are (serial head chaining would need H*R).
struct BlockTask {
  int head = 0;
  int depth = 0;
  bool special = false;
};

struct WavefrontPlan {
  int n_steps = 0;
  std::vector<std::vector<BlockTask>> steps;
};

WavefrontPlan wavefront_schedule(const HeadConfig& cfg);
void validate_plan(const WavefrontPlan& plan, const HeadConfig& cfg);

// Executes the plan. Block outputs land in disjoint slots, so results are
// identical for any worker count; n_threads > 1 fans a step's tasks out to
// std::thread workers with a barrier between depths.
template <class S>
std::vector<TensorT<S>> head_stack_forward(const HeadStackT<S>& stack,
                                           const TensorT<S>& h_last,
                                           int n_threads = 1) {
  check_shape(h_last.rank() == 2 && int(h_last.dim(1)) == stack.d,
              "h_last must be [n x d]");
  const WavefrontPlan plan = wavefront_schedule(stack.cfg);
  const int H = stack.cfg.n_heads;
  std::vector<std::vector<TensorT<S>>> out(
      std::size_t(H), std::vector<TensorT<S>>(static_cast<std::size_t>(plan.n_steps)));

  for (const auto& step : plan.steps) {
    auto run_task = [&](const BlockTask& task) {
      const auto& blk = stack.blocks[std::size_t(task.head)][std::size_t(task.depth)];
      const TensorT<S>& own = task.depth == 0
                                  ? h_last
                                  : out[std::size_t(task.head)][std::size_t(task.depth - 1)];
      if (task.special) {
        const TensorT<S>& tap =
            task.depth == 0
                ? h_last
                : out[std::size_t(task.head - 1)][std::size_t(task.depth - 1)];
        out[std::size_t(task.head)][std::size_t(task.depth)] =
            special_resblock_forward(blk, own, tap, stack.cfg.variant);
      } else {
        out[std::size_t(task.head)][std::size_t(task.depth)] =
            resblock_forward(blk, own, stack.cfg.variant);
      }
    };
    if (n_threads > 1 && step.size() > 1) {
      std::vector<std::thread> workers;
      const int nw = std::min<int>(n_threads, int(step.size()));
      for (int w = 0; w < nw; ++w)
        workers.emplace_back([&, w]() {
          for (std::size_t idx = std::size_t(w); idx < step.size();
               idx += std::size_t(nw))
            run_task(step[idx]);
        });
      for (auto& t : workers) t.join();
    } else {
      for (const auto& task : step) run_task(task);
    }
  }

  std::vector<TensorT<S>> logits(static_cast<std::size_t>(H));
  for (int i = 0; i < H; ++i)
    logits[std::size_t(i)] =
        matmul(out[std::size_t(i)][std::size_t(plan.n_steps - 1)],
               stack.fc[std::size_t(i)]);
  return logits;
}

// Deterministic top-k token ids from one logits row (ties: lower id first).
std::vector<int> topk_ids(const float* logits, int vocab, int k);

}  // namespace cerberus
