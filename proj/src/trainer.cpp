#include "cerberus/trainer.hpp"

#include <cmath>
#include <cstdio>

#include "cerberus/rng.hpp"

namespace cerberus {

void adam_step(const std::vector<Tensor*>& params, AdamState& state, float lr,
               float beta1, float beta2, float eps) {
  check_shape(params.size() == state.m.size(),
              "adam state does not match parameter list");
  state.step += 1;
  const float bc1 = 1.0f - std::pow(beta1, float(state.step));
  const float bc2 = 1.0f - std::pow(beta2, float(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor* p = params[i];
    if (!p->has_grad()) continue;
    const float* g = p->grad();
    float* m = state.m[i].data();
    float* v = state.v[i].data();
    float* w = p->data();
    const std::size_t n = std::size_t(p->numel());
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = beta1 * m[j] + (1.0f - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0f - beta2) * g[j] * g[j];
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (batch < 1 || steps < 0 || seq_len < 2)
    throw ConfigError("bad training geometry");
  if (lambda_decay <= 0.0)
    throw ConfigError("per-head loss weights must be positive");
  if (min_lr_frac < 0.0 || min_lr_frac > 1.0)
    throw ConfigError("min_lr_frac must be in [0, 1]");
}

double lr_at(const TrainConfig& cfg, int step) {
  if (cfg.warmup > 0 && step < cfg.warmup)
    return cfg.lr * double(step + 1) / double(cfg.warmup);
  const int total = std::max(1, cfg.steps - cfg.warmup);
  const double t = std::min(1.0, double(step - cfg.warmup) / double(total));
  const double floor = cfg.lr * cfg.min_lr_frac;
  return floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(3.14159265358979 * t));
}

namespace {

// Evenly spaced non-overlapping-ish windows over the eval tail.
std::vector<std::size_t> eval_starts(const Corpus& corpus, int window_len,
                                     int n_windows) {
  if (corpus.eval_size() < std::size_t(window_len))
    throw DataError("eval split smaller than one window");
  const std::size_t lo = corpus.split;
  const std::size_t span = corpus.eval_size() - std::size_t(window_len);
  std::vector<std::size_t> starts;
  const int n = std::max(1, n_windows);
  for (int i = 0; i < n; ++i)
    starts.push_back(lo + span * std::size_t(i) / std::size_t(n));
  return starts;
}

std::vector<int> window_at(const Corpus& corpus, std::size_t start, int len) {
  return std::vector<int>(corpus.tokens.begin() + long(start),
                          corpus.tokens.begin() + long(start + std::size_t(len)));
}

std::size_t sample_start(Rng& rng, const Corpus& corpus, int window_len) {
  if (corpus.train_size() < std::size_t(window_len) + 1)
    throw DataError("train split smaller than one window");
  return std::size_t(rng.below(corpus.train_size() - std::size_t(window_len)));
}

std::vector<double> lambdas_for(const TrainConfig& cfg, int n_heads) {
  std::vector<double> l(static_cast<std::size_t>(n_heads));
  for (int i = 0; i < n_heads; ++i) l[std::size_t(i)] = std::pow(cfg.lambda_decay, i);
  return l;
}

}  // namespace

std::vector<int> head_targets(const std::vector<int>& window, int seq_len,
                              int head) {
  check_shape(int(window.size()) >= seq_len + head + 2,
              "window too short for head target offset");
  return std::vector<int>(window.begin() + (head + 2),
                          window.begin() + (head + 2) + seq_len);
}

double eval_backbone_loss(BackboneModel& model, const Corpus& corpus,
                          const TrainConfig& cfg) {
  const int W = cfg.seq_len + 1;
  const bool was_trainable = model.lm_head.requires_grad();
  model.set_requires_grad(false);
  double total = 0.0;
  const auto starts = eval_starts(corpus, W, cfg.eval_windows);
  for (auto s : starts) {
    const auto window = window_at(corpus, s, W);
    std::vector<int> inputs(window.begin(), window.end() - 1);
    std::vector<int> targets(window.begin() + 1, window.end());
    auto out = train_forward(model, inputs);
    total += double(cross_entropy_mean(out.logits, targets).data()[0]);
  }
  if (was_trainable) model.set_requires_grad(true);
  return total / double(starts.size());
}

TrainStats train_backbone(BackboneModel& model, const Corpus& corpus,
                          const TrainConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  auto params = model.params();
  AdamState adam(params);

  TrainStats stats;
  stats.init_eval_loss = eval_backbone_loss(model, corpus, cfg);
  if (!cfg.quiet)
    std::printf("[train-backbone] init eval loss %.4f\n", stats.init_eval_loss);

  const int W = cfg.seq_len + 1;
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor loss;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto window = window_at(corpus, sample_start(rng, corpus, W), W);
      std::vector<int> inputs(window.begin(), window.end() - 1);
      std::vector<int> targets(window.begin() + 1, window.end());
      auto out = train_forward(model, inputs);
      Tensor ce = cross_entropy_mean(out.logits, targets);
      loss = b == 0 ? ce : add(loss, ce);
    }
    loss = scale(loss, 1.0f / float(cfg.batch));
    backward(loss);
    adam_step(params, adam, float(lr_at(cfg, step)));
    for (auto* p : params) p->zero_grad();
    if (!cfg.quiet && cfg.log_every > 0 &&
        ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps))
      std::printf("[train-backbone] step %d/%d train loss %.4f lr %.2e\n",
                  step + 1, cfg.steps, double(loss.data()[0]),
                  lr_at(cfg, step));
  }

  stats.final_eval_loss = eval_backbone_loss(model, corpus, cfg);
  if (!cfg.quiet)
    std::printf("[train-backbone] final eval loss %.4f\n",
                stats.final_eval_loss);
  return stats;
}

namespace {

double eval_heads_weighted(const HeadStack& stack, BackboneModel& backbone,
                           const Corpus& corpus, const TrainConfig& cfg,
                           std::vector<double>* per_head) {
  const int H = stack.cfg.n_heads;
  const int W = cfg.seq_len + H + 1;
  const auto lambdas = lambdas_for(cfg, H);
  const auto starts = eval_starts(corpus, W, cfg.eval_windows);
  std::vector<double> sums(std::size_t(H), 0.0);
  for (auto s : starts) {
    const auto window = window_at(corpus, s, W);
    std::vector<int> inputs(window.begin(), window.begin() + cfg.seq_len);
    auto out = train_forward(backbone, inputs);
    auto logits = head_stack_forward(stack, out.h_last);
    for (int i = 0; i < H; ++i) {
      Tensor ce = cross_entropy_mean(logits[std::size_t(i)],
                                     head_targets(window, cfg.seq_len, i));
      sums[std::size_t(i)] += double(ce.data()[0]);
    }
  }
  double weighted = 0.0;
  for (int i = 0; i < H; ++i) {
    sums[std::size_t(i)] /= double(starts.size());
    weighted += lambdas[std::size_t(i)] * sums[std::size_t(i)];
  }
  if (per_head) *per_head = sums;
  return weighted;
}

}  // namespace

std::vector<double> eval_head_losses(const HeadStack& stack,
                                     BackboneModel& backbone,
                                     const Corpus& corpus,
                                     const TrainConfig& cfg) {
  backbone.set_requires_grad(false);
  std::vector<double> per_head;
  eval_heads_weighted(stack, backbone, corpus, cfg, &per_head);
  return per_head;
}

TrainStats train_heads(HeadStack& stack, BackboneModel& backbone,
                       const Corpus& corpus, const TrainConfig& cfg) {
  cfg.validate();
  // Precondition, not a courtesy: the caller decides what is trainable.
  for (auto* p : backbone.params())
    if (p->requires_grad() || p->has_grad())
      throw ConfigError("backbone must be frozen during head training");

  Rng rng(cfg.seed);
  std::vector<Tensor*> params;
  for (auto& [name, t] : named_params(stack)) params.push_back(t);
  AdamState adam(params);

  const int H = stack.cfg.n_heads;
  const int W = cfg.seq_len + H + 1;
  const auto lambdas = lambdas_for(cfg, H);

  TrainStats stats;
  stats.init_eval_loss =
      eval_heads_weighted(stack, backbone, corpus, cfg, nullptr);
  if (!cfg.quiet)
    std::printf("[train-heads:%s] init eval loss %.4f\n",
                to_string(stack.cfg.paradigm).c_str(), stats.init_eval_loss);

  for (int step = 0; step < cfg.steps; ++step) {
    Tensor loss;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto window = window_at(corpus, sample_start(rng, corpus, W), W);
      std::vector<int> inputs(window.begin(), window.begin() + cfg.seq_len);
      auto out = train_forward(backbone, inputs);
      std::vector<std::vector<int>> targets;
      targets.reserve(static_cast<std::size_t>(H));
      for (int i = 0; i < H; ++i)
        targets.push_back(head_targets(window, cfg.seq_len, i));
      Tensor l = head_training_loss(stack, out.h_last, targets, lambdas);
      loss = b == 0 ? l : add(loss, l);
    }
    loss = scale(loss, 1.0f / float(cfg.batch));
    backward(loss);
    adam_step(params, adam, float(lr_at(cfg, step)));
    for (auto* p : params) p->zero_grad();
    if (!cfg.quiet && cfg.log_every > 0 &&
        ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps))
      std::printf("[train-heads:%s] step %d/%d train loss %.4f\n",
                  to_string(stack.cfg.paradigm).c_str(), step + 1, cfg.steps,
                  double(loss.data()[0]));
  }

  stats.final_eval_loss =
      eval_heads_weighted(stack, backbone, corpus, cfg, nullptr);
  if (!cfg.quiet)
    std::printf("[train-heads:%s] final eval loss %.4f\n",
                to_string(stack.cfg.paradigm).c_str(), stats.final_eval_loss);
  return stats;
}

HeadEvalTable eval_head_topk(const HeadStack& stack, BackboneModel& backbone,
                             const Corpus& corpus, const TrainConfig& cfg,
                             int top_k, std::int64_t max_positions) {
  backbone.set_requires_grad(false);
  const int H = stack.cfg.n_heads;
  const int W = cfg.seq_len + H + 1;

  HeadEvalTable table;
  table.n_heads = H;
  table.top_k = top_k;
  table.topk_acc.assign(std::size_t(H), std::vector<double>(std::size_t(top_k), 0.0));
  table.rank_freq = table.topk_acc;

  std::vector<std::vector<std::int64_t>> hits(
      std::size_t(H), std::vector<std::int64_t>(std::size_t(top_k), 0));

  const std::size_t eval_span = corpus.eval_size();
  if (eval_span < std::size_t(W)) throw DataError("eval split too small");
  std::int64_t positions = 0;
  for (std::size_t s = corpus.split; s + std::size_t(W) <= corpus.tokens.size();
       s += std::size_t(cfg.seq_len)) {
    if (positions >= max_positions) break;
    const auto window = window_at(corpus, s, W);
    std::vector<int> inputs(window.begin(), window.begin() + cfg.seq_len);
    auto out = train_forward(backbone, inputs);
    auto logits = head_stack_forward(stack, out.h_last);
    for (int i = 0; i < H; ++i) {
      const auto targets = head_targets(window, cfg.seq_len, i);
      for (int p = 0; p < cfg.seq_len; ++p) {
        const auto ids = topk_ids(
            logits[std::size_t(i)].data() + std::size_t(p) * stack.vocab,
            stack.vocab, top_k);
        for (int r = 0; r < int(ids.size()); ++r)
          if (ids[std::size_t(r)] == targets[std::size_t(p)]) {
            hits[std::size_t(i)][std::size_t(r)] += 1;
            break;
          }
      }
    }
    positions += cfg.seq_len;
  }
  table.positions = positions;
  for (int i = 0; i < H; ++i) {
    double cum = 0.0;
    for (int r = 0; r < top_k; ++r) {
      table.rank_freq[std::size_t(i)][std::size_t(r)] =
          double(hits[std::size_t(i)][std::size_t(r)]) / double(positions);
      cum += table.rank_freq[std::size_t(i)][std::size_t(r)];
      table.topk_acc[std::size_t(i)][std::size_t(r)] = cum;
    }
  }
  return table;
}

}  // namespace cerberus
