#include "cerberus/engine.hpp"

#include <chrono>

#include "cerberus/kernels.hpp"

namespace cerberus {

namespace {
using Clock = std::chrono::steady_clock;
}

DecodeSession::DecodeSession(const BackboneModel& model,
                             const HeadStack* heads, GateConfig gate,
                             TemplateSet templates, int max_new_tokens,
                             int stop_token, int begin_token, int head_threads)
    : model_(model),
      heads_(heads),
      gate_(gate),
      templates_(std::move(templates)),
      cache_(model.cfg),
      max_new_tokens_(max_new_tokens),
      stop_token_(stop_token),
      begin_token_(begin_token),
      head_threads_(head_threads) {
  gate_.validate();
  if (heads_) {
    templates_.validate();
    if (templates_.max_depth() > heads_->cfg.n_heads)
      throw ConfigError("template depth exceeds head count");
    if (templates_.top_k > heads_->cfg.top_k)
      throw ConfigError("template top_k exceeds head config top_k");
    if (model_.cfg.max_context < 2 * (1 + int(templates_.size())))
      throw ConfigError(
          "max_context must be at least twice the tree size plus one");
  }
  if (max_new_tokens_ < 0) throw ConfigError("max_new_tokens must be >= 0");
}

void DecodeSession::prefill(const std::vector<int>& prompt) {
  std::vector<int> tokens = prompt.empty()
                                ? std::vector<int>{begin_token_}
                                : prompt;
  if (int(tokens.size()) >= model_.cfg.max_context)
    throw CapacityError("prompt does not fit in the context window");
  cache_.reset();
  committed_ = tokens;
  prompt_len_ = int(tokens.size());
  has_pending_ = false;
  finished_ = max_new_tokens_ == 0;
  traces_.clear();

  ForwardOutput fwd = forward_causal(model_, cache_, tokens);
  const int last = fwd.T - 1;
  h_last_.assign(fwd.h_row(last), fwd.h_row(last) + fwd.d);
  logits_.assign(fwd.logit_row(last), fwd.logit_row(last) + fwd.V);
}

int DecodeSession::commit_tokens(const std::vector<int>& toks) {
  int n = 0;
  for (int t : toks) {
    if (emitted_count() >= max_new_tokens_) {
      finished_ = true;
      break;
    }
    committed_.push_back(t);
    ++n;
    if (t == stop_token_) {
      finished_ = true;
      break;
    }
  }
  if (emitted_count() >= max_new_tokens_) finished_ = true;
  return n;
}

StepTrace DecodeSession::decode_step() {
  if (finished_) throw std::logic_error("decode_step on a finished session");
  if (cache_.len + 1 > model_.cfg.max_context) {
    // No room even for a single-token step.
    finished_ = true;
    StepTrace t;
    t.backbone_forwards = 0;
    return t;
  }

  GateDecision decision = decide(gate_, h_last_, logits_);
  if (!heads_) decision.route = Route::Autoregressive;

  const auto t0 = Clock::now();
  StepTrace trace = decision.route == Route::Parallel
                        ? step_parallel(decision)
                        : step_autoregressive(decision);
  trace.wall_ns =
      std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0)
          .count();
  traces_.push_back(trace);
  return trace;
}

StepTrace DecodeSession::step_autoregressive(const GateDecision& decision) {
  StepTrace trace;
  trace.entropy = decision.entropy;
  trace.route = Route::Autoregressive;

  if (has_pending_) {
    // Standard incremental step: forward the pending token, then commit
    // the argmax of the fresh logits as the new pending token.
    ForwardOutput fwd = forward_causal(model_, cache_, {committed_.back()});
    h_last_.assign(fwd.h_row(0), fwd.h_row(0) + fwd.d);
    logits_.assign(fwd.logit_row(0), fwd.logit_row(0) + fwd.V);
    const int next = kern::argmax(logits_.data(), fwd.V);
    trace.tokens_emitted = commit_tokens({next});
    has_pending_ = trace.tokens_emitted == 1;
  } else {
    const int next = kern::argmax(logits_.data(), int(logits_.size()));
    trace.tokens_emitted = commit_tokens({next});
    if (trace.tokens_emitted == 1) {
      ForwardOutput fwd = forward_causal(model_, cache_, {next});
      h_last_.assign(fwd.h_row(0), fwd.h_row(0) + fwd.d);
      logits_.assign(fwd.logit_row(0), fwd.logit_row(0) + fwd.V);
    } else {
      trace.backbone_forwards = 0;  // budget was already exhausted
    }
  }
  return trace;
}

StepTrace DecodeSession::step_parallel(const GateDecision& decision) {
  // Candidates come from the hidden state in hand, which is the same state
  // the gate just scored: head i proposes tokens at offset i+2 from that
  // position, i.e. depth i+1 below the root token.
  Tensor h = Tensor::from({1, int(h_last_.size())},
                          std::vector<float>(h_last_.begin(), h_last_.end()));
  std::vector<Tensor> head_logits =
      head_stack_forward(*heads_, h, head_threads_);
  std::vector<std::vector<int>> per_head_topk;
  per_head_topk.reserve(head_logits.size());
  for (const auto& hl : head_logits)
    per_head_topk.push_back(
        topk_ids(hl.data(), heads_->vocab, templates_.top_k));

  CandidateTree tree = build_tree(templates_, per_head_topk);

  StepTrace trace;
  trace.entropy = decision.entropy;
  trace.route = Route::Parallel;
  trace.head_block_execs = heads_->block_exec_count();
  trace.tree_size = tree.size();

  if (cache_.len + 1 + tree.size() > model_.cfg.max_context) {
    // Tree does not fit; fall back to a plain incremental step. The trace
    // records what actually ran.
    return step_autoregressive(decision);
  }

  // The root row of the verification forward is the newest committed token.
  // Right after prefill (or a pure auto-regressive prefix) no token is
  // pending, so the greedy next token is committed first and doubles as
  // the root; it counts toward this step's emission.
  int root_is_new = 0;
  if (!has_pending_) {
    const int next = kern::argmax(logits_.data(), int(logits_.size()));
    if (next == stop_token_) return step_autoregressive(decision);
    if (commit_tokens({next}) != 1) {
      StepTrace t = trace;
      t.tree_size = 0;
      t.head_block_execs = 0;
      t.backbone_forwards = 0;
      return t;
    }
    has_pending_ = true;
    root_is_new = 1;
  }

  const int base_len = cache_.len;
  VerifyResult res = verify(tree, model_, cache_, committed_.back());

  std::vector<int> offered = res.accepted;
  offered.push_back(res.bonus_token);
  const int n_committed = commit_tokens(offered);
  const int n_accepted_committed =
      std::min<int>(n_committed, int(res.accepted.size()));

  if (n_committed == int(offered.size())) {
    has_pending_ = true;  // the bonus token rides into the next forward
  } else {
    // Truncated by the stop token or the budget: drop the cache rows of
    // tokens that were never committed. Root + surviving accepted rows
    // remain, so the cache matches the committed sequence exactly.
    rollback(cache_, base_len + 1 + n_accepted_committed);
    has_pending_ = false;
    finished_ = true;
  }

  h_last_ = res.h_last;
  logits_ = res.logits;

  trace.tokens_emitted = root_is_new + n_committed;
  trace.accepted = n_accepted_committed;
  return trace;
}

DecodeResult decode(const BackboneModel& model, const HeadStack* heads,
                    const GateConfig& gate, const TemplateSet& templates,
                    const std::vector<int>& prompt, int max_new_tokens,
                    int stop_token, int begin_token, int head_threads) {
  DecodeSession session(model, heads, gate, templates, max_new_tokens,
                        stop_token, begin_token, head_threads);
  session.prefill(prompt);
  while (!session.finished()) session.decode_step();

  DecodeResult out;
  const auto skip =
      session.committed().size() - std::size_t(session.emitted_count());
  out.tokens.assign(session.committed().begin() + long(skip),
                    session.committed().end());
  out.traces = session.traces();
  return out;
}

double tokens_per_forward(const std::vector<StepTrace>& traces) {
  double tokens = 0.0, forwards = 0.0;
  for (const auto& t : traces) {
    tokens += t.tokens_emitted;
    forwards += t.backbone_forwards;
  }
  return forwards == 0.0 ? 0.0 : tokens / forwards;
}

}  // namespace cerberus
