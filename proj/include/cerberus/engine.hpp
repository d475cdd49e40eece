#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cerberus/backbone.hpp"
#include "cerberus/gate.hpp"
#include "cerberus/heads.hpp"
#include "cerberus/tree.hpp"

namespace cerberus {

// Per-step record. Every decode step runs exactly one backbone forward;
// an auto-regressive step runs no head blocks and builds no tree.
struct StepTrace {
  double entropy = 0.0;        // bits, from the state that drove this step
  Route route = Route::Parallel;
  int tokens_emitted = 0;
  int accepted = 0;            // head-proposed tokens that survived
  int tree_size = 0;
  int head_block_execs = 0;
  int backbone_forwards = 1;
  std::int64_t wall_ns = 0;
};

struct DecodeResult {
  std::vector<int> tokens;  // emitted continuation (prompt excluded)
  std::vector<StepTrace> traces;
};

// One decoding session: owns a KV cache and the pipelined per-step state.
// The backbone and head weights are shared read-only; sessions never touch
// them. The decode loop keeps the hidden state and logits of the newest
// fully-forwarded position in hand; the most recent committed token (the
// previous step's bonus) rides along as the next forward's first row, so
// parallel verification costs a single forward per step.
class DecodeSession {
 public:
  DecodeSession(const BackboneModel& model, const HeadStack* heads,
                GateConfig gate, TemplateSet templates, int max_new_tokens,
                int stop_token = -1, int begin_token = 10,
                int head_threads = 1);

  // Processes the prompt (no tokens emitted). Empty prompts fall back to
  // the begin token.
  void prefill(const std::vector<int>& prompt);

  bool finished() const { return finished_; }
  int emitted_count() const { return int(committed_.size()) - prompt_len_; }
  const std::vector<int>& committed() const { return committed_; }
  const std::vector<StepTrace>& traces() const { return traces_; }

  StepTrace decode_step();

 private:
  StepTrace step_autoregressive(const GateDecision& decision);
  StepTrace step_parallel(const GateDecision& decision);
  // Appends to committed_, honoring stop token and the emission budget.
  // Returns how many of the offered tokens were actually committed.
  int commit_tokens(const std::vector<int>& toks);

  const BackboneModel& model_;
  const HeadStack* heads_;  // null for vanilla decoding
  GateConfig gate_;
  TemplateSet templates_;
  KvCache cache_;
  int max_new_tokens_;
  int stop_token_;
  int begin_token_;
  int head_threads_;

  std::vector<int> committed_;
  int prompt_len_ = 0;
  bool finished_ = false;
  bool has_pending_ = false;  // newest committed token not yet in the cache
  std::vector<float> h_last_;
  std::vector<float> logits_;
  std::vector<StepTrace> traces_;
};

// Runs prefill + decode steps until the budget or stop token is reached.
DecodeResult decode(const BackboneModel& model, const HeadStack* heads,
                    const GateConfig& gate, const TemplateSet& templates,
                    const std::vector<int>& prompt, int max_new_tokens,
                    int stop_token = -1, int begin_token = 10,
                    int head_threads = 1);

// Tokens emitted per backbone forward; exactly 1.0 for pure
// auto-regressive traces.
double tokens_per_forward(const std::vector<StepTrace>& traces);

}  // namespace cerberus
