#include "cerberus/backbone.hpp"

#include <cstring>

#include "cerberus/common.hpp"
#include "cerberus/kernels.hpp"

namespace cerberus {

void BackboneConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  if (d_model < 4) throw ConfigError("d_model too small");
  if (n_layers < 1) throw ConfigError("need at least one layer");
  if (n_attn_heads < 1 || d_model % n_attn_heads != 0)
    throw ConfigError("d_model must be divisible by n_attn_heads");
  if (max_context < 4) throw ConfigError("max_context too small");
  if (ffn_mult < 1) throw ConfigError("ffn_mult must be positive");
}

nlohmann::json BackboneConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model},
          {"n_layers", n_layers},     {"n_attn_heads", n_attn_heads},
          {"max_context", max_context}, {"ffn_mult", ffn_mult}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_attn_heads = j.at("n_attn_heads").get<int>();
  c.max_context = j.at("max_context").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.validate();
  return c;
}

BackboneModel BackboneModel::init(const BackboneConfig& cfg, Rng& rng,
                                  float init_std) {
  cfg.validate();
  const int d = cfg.d_model, V = cfg.vocab_size, ff = cfg.ffn_width();
  BackboneModel m;
  m.cfg = cfg;
  m.tok_emb = Tensor::randn({V, d}, rng, init_std, true);
  m.pos_emb = Tensor::randn({cfg.max_context, d}, rng, init_std, true);
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerParams p;
    p.ln1_g = Tensor::full({d}, 1.0f);
    p.ln1_g.set_requires_grad(true);
    p.ln1_b = Tensor::zeros({d}, true);
    p.wq = Tensor::randn({d, d}, rng, init_std, true);
    p.bq = Tensor::zeros({d}, true);
    p.wk = Tensor::randn({d, d}, rng, init_std, true);
    p.bk = Tensor::zeros({d}, true);
    p.wv = Tensor::randn({d, d}, rng, init_std, true);
    p.bv = Tensor::zeros({d}, true);
    p.wo = Tensor::randn({d, d}, rng, init_std, true);
    p.bo = Tensor::zeros({d}, true);
    p.ln2_g = Tensor::full({d}, 1.0f);
    p.ln2_g.set_requires_grad(true);
    p.ln2_b = Tensor::zeros({d}, true);
    p.w1 = Tensor::randn({d, ff}, rng, init_std, true);
    p.b1 = Tensor::zeros({ff}, true);
    p.w2 = Tensor::randn({ff, d}, rng, init_std, true);
    p.b2 = Tensor::zeros({d}, true);
    m.layers.push_back(std::move(p));
  }
  m.final_ln_g = Tensor::full({d}, 1.0f);
  m.final_ln_g.set_requires_grad(true);
  m.final_ln_b = Tensor::zeros({d}, true);
  m.lm_head = Tensor::randn({d, V}, rng, init_std, true);
  return m;
}

std::vector<std::pair<std::string, Tensor*>> BackboneModel::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("tok_emb", &tok_emb);
  out.emplace_back("pos_emb", &pos_emb);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& p = layers[l];
    const std::string base = "layer." + std::to_string(l) + ".";
    out.emplace_back(base + "ln1.g", &p.ln1_g);
    out.emplace_back(base + "ln1.b", &p.ln1_b);
    out.emplace_back(base + "q.W", &p.wq);
    out.emplace_back(base + "q.b", &p.bq);
    out.emplace_back(base + "k.W", &p.wk);
    out.emplace_back(base + "k.b", &p.bk);
    out.emplace_back(base + "v.W", &p.wv);
    out.emplace_back(base + "v.b", &p.bv);
    out.emplace_back(base + "o.W", &p.wo);
    out.emplace_back(base + "o.b", &p.bo);
    out.emplace_back(base + "ln2.g", &p.ln2_g);
    out.emplace_back(base + "ln2.b", &p.ln2_b);
    out.emplace_back(base + "ff1.W", &p.w1);
    out.emplace_back(base + "ff1.b", &p.b1);
    out.emplace_back(base + "ff2.W", &p.w2);
    out.emplace_back(base + "ff2.b", &p.b2);
  }
  out.emplace_back("final_ln.g", &final_ln_g);
  out.emplace_back("final_ln.b", &final_ln_b);
  out.emplace_back("lm_head.W", &lm_head);
  return out;
}

std::vector<Tensor*> BackboneModel::params() {
  std::vector<Tensor*> out;
  for (auto& [n, t] : named_params()) out.push_back(t);
  return out;
}

void BackboneModel::set_requires_grad(bool v) {
  for (auto* t : params()) {
    t->set_requires_grad(v);
    if (!v) t->drop_grad();
  }
}

std::int64_t BackboneModel::param_count() const {
  std::int64_t n = 0;
  for (auto& [name, t] : const_cast<BackboneModel*>(this)->named_params())
    n += t->numel();
  return n;
}

std::uint64_t BackboneModel::weights_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto& [name, t] : const_cast<BackboneModel*>(this)->named_params()) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t->data(), std::size_t(t->numel()) * sizeof(float), h);
  }
  return h;
}

Checkpoint BackboneModel::to_checkpoint() const {
  Checkpoint ck;
  ck.kind = "backbone";
  ck.config = cfg.to_json();
  for (auto& [name, t] : const_cast<BackboneModel*>(this)->named_params())
    ck.add(name, *t);
  return ck;
}

BackboneModel BackboneModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "backbone")
    throw IoError("checkpoint is not a backbone checkpoint");
  BackboneModel m;
  m.cfg = BackboneConfig::from_json(ck.config);
  Rng rng(0);
  m = BackboneModel::init(m.cfg, rng);
  for (auto& [name, t] : m.named_params()) {
    const Tensor& src = ck.get(name);
    check_shape(src.shape() == t->shape(),
                "checkpoint tensor shape mismatch for " + name);
    std::copy(src.vec().begin(), src.vec().end(), t->vec().begin());
  }
  return m;
}

AttentionMask AttentionMask::causal(int cache_len, int t_new) {
  AttentionMask m;
  m.rows = t_new;
  m.cols = cache_len + t_new;
  m.allow.assign(std::size_t(m.rows) * m.cols, 0);
  for (int r = 0; r < t_new; ++r)
    for (int c = 0; c <= cache_len + r; ++c) m.at(r, c) = 1;
  return m;
}

// ---------------------------------------------------------------------------
// Incremental forward (decode path)
// ---------------------------------------------------------------------------

ForwardOutput forward(const BackboneModel& model, KvCache& cache,
                      const std::vector<int>& tokens,
                      const std::vector<int>& positions,
                      const AttentionMask& mask) {
  const auto& cfg = model.cfg;
  const int T = int(tokens.size());
  const int L = cache.len;
  const int d = cfg.d_model, V = cfg.vocab_size, ff = cfg.ffn_width();
  const int hd = cfg.head_dim();

  if (T == 0) throw ShapeError("forward expects at least one token");
  if (L + T > cfg.max_context)
    throw CapacityError("context overflow: " + std::to_string(L + T) + " > " +
                        std::to_string(cfg.max_context));
  check_shape(int(positions.size()) == T, "positions size mismatch");
  check_shape(mask.rows == T && mask.cols == L + T,
              "mask must be T x (cache_len + T)");
  for (int t = 0; t < T; ++t) {
    if (!mask.at(t, L + t))
      throw ShapeError("mask must let each new position attend to itself");
    for (int c = L + t + 1; c < L + T; ++c)
      if (mask.at(t, c))
        throw ShapeError("mask may not attend forward within the new block");
    if (positions[std::size_t(t)] < 0 ||
        positions[std::size_t(t)] >= cfg.max_context)
      throw CapacityError("position index out of range");
    if (tokens[std::size_t(t)] < 0 || tokens[std::size_t(t)] >= V)
      throw std::out_of_range("token id out of vocabulary range");
  }

  ForwardOutput out;
  out.T = T;
  out.d = d;
  out.V = V;
  out.h_last.resize(std::size_t(T) * d);
  out.logits.resize(std::size_t(T) * V);

  std::vector<float> x(static_cast<std::size_t>(d)), norm(static_cast<std::size_t>(d)),
      tmp(static_cast<std::size_t>(d)), attn(static_cast<std::size_t>(d)), ffbuf(static_cast<std::size_t>(ff));

  for (int t = 0; t < T; ++t) {
    const int tok = tokens[std::size_t(t)];
    const int pos = positions[std::size_t(t)];
    const float* te = model.tok_emb.data() + std::size_t(tok) * d;
    const float* pe = model.pos_emb.data() + std::size_t(pos) * d;
    for (int c = 0; c < d; ++c) x[std::size_t(c)] = te[c] + pe[c];

    for (int l = 0; l < cfg.n_layers; ++l) {
      const auto& p = model.layers[std::size_t(l)];
      kern::layernorm_row(x.data(), p.ln1_g.data(), p.ln1_b.data(),
                          norm.data(), d, 1e-5f);
      float* krow = cache.k[std::size_t(l)].data() + std::size_t(L + t) * d;
      float* vrow = cache.v[std::size_t(l)].data() + std::size_t(L + t) * d;
      kern::matvec(norm.data(), p.wq.data(), tmp.data(), d, d);
      for (int c = 0; c < d; ++c) tmp[std::size_t(c)] += p.bq.data()[c];
      kern::matvec(norm.data(), p.wk.data(), krow, d, d);
      for (int c = 0; c < d; ++c) krow[c] += p.bk.data()[c];
      kern::matvec(norm.data(), p.wv.data(), vrow, d, d);
      for (int c = 0; c < d; ++c) vrow[c] += p.bv.data()[c];

      kern::attention_row(tmp.data(), cache.k[std::size_t(l)].data(),
                          cache.v[std::size_t(l)].data(), L + t + 1,
                          mask.row(t), cfg.n_attn_heads, hd, attn.data());
      kern::matvec(attn.data(), p.wo.data(), tmp.data(), d, d);
      for (int c = 0; c < d; ++c)
        x[std::size_t(c)] += tmp[std::size_t(c)] + p.bo.data()[c];

      kern::layernorm_row(x.data(), p.ln2_g.data(), p.ln2_b.data(),
                          norm.data(), d, 1e-5f);
      kern::matvec(norm.data(), p.w1.data(), ffbuf.data(), d, ff);
      for (int c = 0; c < ff; ++c)
        ffbuf[std::size_t(c)] = kern::silu(ffbuf[std::size_t(c)] + p.b1.data()[c]);
      kern::matvec(ffbuf.data(), p.w2.data(), tmp.data(), ff, d);
      for (int c = 0; c < d; ++c)
        x[std::size_t(c)] += tmp[std::size_t(c)] + p.b2.data()[c];
    }

    float* h = out.h_last.data() + std::size_t(t) * d;
    kern::layernorm_row(x.data(), model.final_ln_g.data(),
                        model.final_ln_b.data(), h, d, 1e-5f);
    kern::matvec(h, model.lm_head.data(), out.logits.data() + std::size_t(t) * V,
                 d, V);
  }

  cache.len = L + T;
  return out;
}

ForwardOutput forward_causal(const BackboneModel& model, KvCache& cache,
                             const std::vector<int>& tokens) {
  const int L = cache.len;
  const int T = int(tokens.size());
  std::vector<int> positions(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) positions[std::size_t(t)] = L + t;
  return forward(model, cache, tokens, positions,
                 AttentionMask::causal(L, T));
}

void rollback(KvCache& cache, int to_length) {
  if (to_length < 0 || to_length > cache.len)
    throw CapacityError("rollback target beyond committed length");
  cache.len = to_length;
}

void keep_rows(KvCache& cache, int base_len, const std::vector<int>& kept) {
  const int d = cache.d;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const int src = base_len + kept[i];
    const int dst = base_len + int(i);
    if (src < dst || src >= cache.max_context)
      throw CapacityError("keep_rows offsets must be ascending and in range");
    if (src == dst) continue;
    for (int l = 0; l < cache.n_layers; ++l) {
      std::memcpy(cache.k[std::size_t(l)].data() + std::size_t(dst) * d,
                  cache.k[std::size_t(l)].data() + std::size_t(src) * d,
                  std::size_t(d) * sizeof(float));
      std::memcpy(cache.v[std::size_t(l)].data() + std::size_t(dst) * d,
                  cache.v[std::size_t(l)].data() + std::size_t(src) * d,
                  std::size_t(d) * sizeof(float));
    }
  }
  cache.len = base_len + int(kept.size());
}

// ---------------------------------------------------------------------------
// Autodiff forward (training path)
// ---------------------------------------------------------------------------

TrainForwardOutput train_forward(BackboneModel& model,
                                 const std::vector<int>& tokens) {
  const auto& cfg = model.cfg;
  const int S = int(tokens.size());
  if (S > cfg.max_context)
    throw CapacityError("training window exceeds max_context");
  std::vector<int> positions(static_cast<std::size_t>(S));
  for (int i = 0; i < S; ++i) positions[std::size_t(i)] = i;

  Tensor x = add(embedding(model.tok_emb, tokens),
                 embedding(model.pos_emb, positions));
  for (auto& p : model.layers) {
    Tensor h = layer_norm(x, p.ln1_g, p.ln1_b);
    Tensor q = add_bias(matmul(h, p.wq), p.bq);
    Tensor k = add_bias(matmul(h, p.wk), p.bk);
    Tensor v = add_bias(matmul(h, p.wv), p.bv);
    Tensor a = causal_self_attention(q, k, v, cfg.n_attn_heads);
    x = add(x, add_bias(matmul(a, p.wo), p.bo));
    Tensor h2 = layer_norm(x, p.ln2_g, p.ln2_b);
    Tensor f = silu(add_bias(matmul(h2, p.w1), p.b1));
    x = add(x, add_bias(matmul(f, p.w2), p.b2));
  }
  TrainForwardOutput out;
  out.h_last = layer_norm(x, model.final_ln_g, model.final_ln_b);
  out.logits = matmul(out.h_last, model.lm_head);
  return out;
}

}  // namespace cerberus
