#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cerberus/data.hpp"
#include "cerberus/engine.hpp"
#include "cerberus/trainer.hpp"

namespace cerberus {

// One benchmarked configuration: a decoding approach plus gate and tree
// settings. Vanilla ignores gate/templates.
struct RunSpec {
  std::string approach = "vanilla";  // vanilla | medusa | cerberus
  bool gated = false;
  GateConfig gate;
  int tree_paths = 0;
  TemplateSet templates;

  std::string label() const;
};

// One prompt decoded under one spec, with its per-step traces.
struct BenchRun {
  std::string approach;
  bool gated = false;
  int tree_paths = 0;
  std::string category;
  int prompt_index = 0;
  int prompt_len = 0;
  int emitted = 0;
  double wall_seconds = 0.0;  // decode loop only (prefill excluded)
  std::vector<StepTrace> traces;
};

// JSONL trace persistence: a "run" line followed by one "step" line per
// decode step. Reports are a pure function of these records.
void save_traces_jsonl(const std::vector<BenchRun>& runs,
                       const std::string& path);
std::vector<BenchRun> load_traces_jsonl(const std::string& path);

// ---------------------------------------------------------------------------
// Analyses
// ---------------------------------------------------------------------------

// Spearman rank correlation with average ranks for ties; 0 when either
// side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct EntropyBucket {
  int accepted = 0;
  std::int64_t steps = 0;
  double mean_entropy = 0.0;
};

struct EntropyAcceptanceAnalysis {
  std::vector<EntropyBucket> buckets;  // ascending accepted count
  double correlation = 0.0;            // entropy vs accepted, parallel steps
  std::int64_t parallel_steps = 0;
  bool sufficient = false;             // >= 30 parallel steps
};

EntropyAcceptanceAnalysis entropy_acceptance_analysis(
    const std::vector<StepTrace>& traces);

// Fraction of parallel-routed steps whose verification accepted nothing.
double zero_accept_proportion(const std::vector<StepTrace>& traces);

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct CategoryStats {
  double tokens_per_forward = 0.0;
  double tokens_per_second = 0.0;
  double zero_accept = 0.0;
  std::int64_t tokens = 0;
  std::int64_t steps = 0;
  std::int64_t parallel_steps = 0;
};

struct ConfigAggregate {
  std::string approach;
  bool gated = false;
  int tree_paths = 0;
  std::string label;

  double tokens_per_forward = 0.0;
  double tokens_per_second = 0.0;
  double speedup_tokens_per_forward = 0.0;  // vs vanilla
  double speedup_wall = 0.0;
  double zero_accept = 0.0;
  double mean_step_latency_ms = 0.0;
  std::int64_t head_block_execs = 0;
  std::int64_t tokens = 0;
  std::int64_t steps = 0;
  std::int64_t parallel_steps = 0;
  std::int64_t ar_steps = 0;
  EntropyAcceptanceAnalysis entropy_analysis;
  std::map<std::string, CategoryStats> per_category;
};

struct BenchReport {
  std::vector<ConfigAggregate> configs;  // vanilla first
  nlohmann::json to_json() const;
};

// Pure reduction of runs into the report; throws if accounting identities
// fail (token sums, proportion bounds, vanilla self-speedup).
BenchReport build_report(const std::vector<BenchRun>& runs);

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

struct BenchSettings {
  int max_tokens = 64;
  int stop_token = -1;
  int begin_token = 10;
  int threads = 1;  // parallel prompt sessions
};

std::vector<BenchRun> run_bench(const BackboneModel& model,
                                const HeadStack* medusa,
                                const HeadStack* cerberus,
                                const PromptSuite& suite,
                                const std::vector<RunSpec>& specs,
                                const BenchSettings& settings);

// CSV emitters (one table per analysis family).
void write_zero_accept_csv(const BenchReport& report, const std::string& path);
void write_entropy_buckets_csv(const BenchReport& report,
                               const std::string& path);
void write_head_accuracy_csv(
    const std::vector<std::pair<std::string, HeadEvalTable>>& tables,
    const std::string& path);
void write_speed_csv(const BenchReport& report, const std::string& path);

}  // namespace cerberus
