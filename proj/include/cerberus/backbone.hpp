#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cerberus/checkpoint.hpp"
#include "cerberus/tensor.hpp"

namespace cerberus {

struct BackboneConfig {
  int vocab_size = 256;
  int d_model = 128;
  int n_layers = 4;
  int n_attn_heads = 4;
  int max_context = 512;
  int ffn_mult = 4;

  int ffn_width() const { return d_model * ffn_mult; }
  int head_dim() const { return d_model / n_attn_heads; }
  void validate() const;

  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);
};

struct LayerParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor w1, b1, w2, b2;
};

// Pre-norm decoder-only transformer with learned positional embeddings and
// an untied LM head.
struct BackboneModel {
  BackboneConfig cfg;
  Tensor tok_emb;   // [V x d]
  Tensor pos_emb;   // [ctx x d]
  std::vector<LayerParams> layers;
  Tensor final_ln_g, final_ln_b;
  Tensor lm_head;   // [d x V]

  static BackboneModel init(const BackboneConfig& cfg, Rng& rng,
                            float init_std = 0.02f);

  std::vector<std::pair<std::string, Tensor*>> named_params();
  std::vector<Tensor*> params();
  void set_requires_grad(bool v);
  std::int64_t param_count() const;
  std::uint64_t weights_hash() const;

  Checkpoint to_checkpoint() const;
  static BackboneModel from_checkpoint(const Checkpoint& ck);
};

// Per-layer projected key/value rows up to the committed length. Rows are
// computed position-independently, so truncating to any shorter length is
// exactly the state a fresh prefill of that prefix would produce.
struct KvCache {
  int n_layers = 0;
  int d = 0;
  int max_context = 0;
  int len = 0;  // committed length
  std::vector<std::vector<float>> k, v;  // per layer, [max_context x d]

  KvCache() = default;
  KvCache(const BackboneConfig& cfg)
      : n_layers(cfg.n_layers), d(cfg.d_model), max_context(cfg.max_context) {
    k.assign(std::size_t(n_layers),
             std::vector<float>(std::size_t(max_context) * d, 0.0f));
    v = k;
  }

  void reset() { len = 0; }
};

// Boolean attention mask for a forward of T new rows over a cache of
// length L: rows index the new positions, columns index [cache | new].
struct AttentionMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> allow;  // rows x cols

  std::uint8_t& at(int r, int c) { return allow[std::size_t(r) * cols + c]; }
  std::uint8_t at(int r, int c) const {
    return allow[std::size_t(r) * cols + c];
  }
  const std::uint8_t* row(int r) const {
    return allow.data() + std::size_t(r) * cols;
  }

  static AttentionMask causal(int cache_len, int t_new);
};

struct ForwardOutput {
  int T = 0, d = 0, V = 0;
  std::vector<float> h_last;  // [T x d], post final norm
  std::vector<float> logits;  // [T x V]

  const float* h_row(int t) const { return h_last.data() + std::size_t(t) * d; }
  const float* logit_row(int t) const {
    return logits.data() + std::size_t(t) * V;
  }
};

// One incremental forward pass: appends T rows to the cache (the caller
// may roll back), honoring an arbitrary boolean mask and explicit position
// indices for the new rows. Throws CapacityError when the rows do not fit.
ForwardOutput forward(const BackboneModel& model, KvCache& cache,
                      const std::vector<int>& tokens,
                      const std::vector<int>& positions,
                      const AttentionMask& mask);

// Causal convenience wrapper: positions follow the cache length.
ForwardOutput forward_causal(const BackboneModel& model, KvCache& cache,
                             const std::vector<int>& tokens);

void rollback(KvCache& cache, int to_length);

// Compact the rows written after base_len: keep the block-local offsets in
// `kept` (ascending), drop the rest. Used to retain verified tree rows.
void keep_rows(KvCache& cache, int base_len, const std::vector<int>& kept);

// Full-sequence causal forward on the autodiff path (training). Row i of
// the result is bit-identical to what the incremental path produces for
// the same prefix.
struct TrainForwardOutput {
  Tensor h_last;  // [S x d]
  Tensor logits;  // [S x V]
};
TrainForwardOutput train_forward(BackboneModel& model,
                                 const std::vector<int>& tokens);

}  // namespace cerberus
