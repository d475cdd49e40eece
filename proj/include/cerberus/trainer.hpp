#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cerberus/backbone.hpp"
#include "cerberus/data.hpp"
#include "cerberus/heads.hpp"

namespace cerberus {

// Adam with bias correction; one slot pair per parameter tensor.
struct AdamState {
  std::vector<std::vector<float>> m, v;
  std::int64_t step = 0;

  explicit AdamState(const std::vector<Tensor*>& params) {
    for (auto* p : params) {
      m.emplace_back(std::size_t(p->numel()), 0.0f);
      v.emplace_back(std::size_t(p->numel()), 0.0f);
    }
  }
};

void adam_step(const std::vector<Tensor*>& params, AdamState& state, float lr,
               float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);

struct TrainConfig {
  double lr = 4e-4;
  int batch = 8;
  int steps = 2000;
  int seq_len = 128;
  int warmup = 100;
  double min_lr_frac = 0.1;
  double lambda_decay = 0.8;  // per-head loss weight: lambda_i = decay^i
  int eval_windows = 32;
  int log_every = 100;
  std::uint64_t seed = 42;
  bool quiet = false;

  void validate() const;
};

// Linear warmup into cosine decay down to min_lr_frac * lr.
double lr_at(const TrainConfig& cfg, int step);

struct TrainStats {
  double init_eval_loss = 0.0;
  double final_eval_loss = 0.0;
};

// Next-token pretraining of the toy backbone.
TrainStats train_backbone(BackboneModel& model, const Corpus& corpus,
                          const TrainConfig& cfg);

// Held-out next-token cross-entropy.
double eval_backbone_loss(BackboneModel& model, const Corpus& corpus,
                          const TrainConfig& cfg);

// Weighted multi-offset loss over one batch of hidden states. Head i is
// scored against the target at offset i+2 from each position.
template <class S>
TensorT<S> head_training_loss(const HeadStackT<S>& stack,
                              const TensorT<S>& h_last,
                              const std::vector<std::vector<int>>& targets,
                              const std::vector<double>& lambdas,
                              int threads = 1) {
  check_shape(targets.size() == stack.blocks.size(),
              "one target row per head expected");
  std::vector<TensorT<S>> logits = head_stack_forward(stack, h_last, threads);
  TensorT<S> loss;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    TensorT<S> term = scale(cross_entropy_mean(logits[i], targets[i]),
                            S(lambdas[i]));
    loss = i == 0 ? term : add(loss, term);
  }
  return loss;
}

// Trains the decoding heads against ground-truth corpus targets with the
// backbone frozen; throws if any backbone tensor still carries gradient
// state.
TrainStats train_heads(HeadStack& stack, BackboneModel& backbone,
                       const Corpus& corpus, const TrainConfig& cfg);

// Per-head weighted loss on held-out windows (also used for the warm-start
// equivalence check).
std::vector<double> eval_head_losses(const HeadStack& stack,
                                     BackboneModel& backbone,
                                     const Corpus& corpus,
                                     const TrainConfig& cfg);

// Top-k' accuracy per head over held-out positions (k' = 1..k), plus the
// per-rank hit frequencies that drive template selection.
struct HeadEvalTable {
  int n_heads = 0;
  int top_k = 0;
  std::int64_t positions = 0;
  std::vector<std::vector<double>> topk_acc;   // [head][k'] cumulative
  std::vector<std::vector<double>> rank_freq;  // [head][rank]
};

HeadEvalTable eval_head_topk(const HeadStack& stack, BackboneModel& backbone,
                             const Corpus& corpus, const TrainConfig& cfg,
                             int top_k, std::int64_t max_positions = 20000);

// Targets for one head from a training window: window[p + head + 2] for
// each in-window position p.
std::vector<int> head_targets(const std::vector<int>& window, int seq_len,
                              int head);

}  // namespace cerberus
