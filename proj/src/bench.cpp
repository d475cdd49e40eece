#include "cerberus/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

namespace cerberus {

std::string RunSpec::label() const {
  if (approach == "vanilla") return "vanilla";
  std::string s = approach;
  s += gated ? "+gate" : "+nogate";
  s += "+paths" + std::to_string(tree_paths);
  return s;
}

// ---------------------------------------------------------------------------
// Trace persistence
// ---------------------------------------------------------------------------

void save_traces_jsonl(const std::vector<BenchRun>& runs,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write trace file: " + path);
  for (const auto& r : runs) {
    nlohmann::json run = {{"type", "run"},
                          {"approach", r.approach},
                          {"gated", r.gated},
                          {"tree_paths", r.tree_paths},
                          {"category", r.category},
                          {"prompt_index", r.prompt_index},
                          {"prompt_len", r.prompt_len},
                          {"emitted", r.emitted},
                          {"wall_seconds", r.wall_seconds}};
    f << run.dump() << "\n";
    for (std::size_t i = 0; i < r.traces.size(); ++i) {
      const auto& t = r.traces[i];
      nlohmann::json step = {{"type", "step"},
                             {"step", i},
                             {"entropy", t.entropy},
                             {"route", to_string(t.route)},
                             {"tokens", t.tokens_emitted},
                             {"accepted", t.accepted},
                             {"tree_size", t.tree_size},
                             {"head_blocks", t.head_block_execs},
                             {"forwards", t.backbone_forwards},
                             {"wall_ns", t.wall_ns}};
      f << step.dump() << "\n";
    }
  }
}

std::vector<BenchRun> load_traces_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open trace file: " + path);
  std::vector<BenchRun> runs;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed trace line: ") + e.what());
    }
    const std::string type = j.at("type").get<std::string>();
    if (type == "run") {
      BenchRun r;
      r.approach = j.at("approach").get<std::string>();
      r.gated = j.at("gated").get<bool>();
      r.tree_paths = j.at("tree_paths").get<int>();
      r.category = j.at("category").get<std::string>();
      r.prompt_index = j.at("prompt_index").get<int>();
      r.prompt_len = j.at("prompt_len").get<int>();
      r.emitted = j.at("emitted").get<int>();
      r.wall_seconds = j.at("wall_seconds").get<double>();
      runs.push_back(std::move(r));
    } else if (type == "step") {
      if (runs.empty()) throw DataError("step line before any run line");
      StepTrace t;
      t.entropy = j.at("entropy").get<double>();
      t.route = j.at("route").get<std::string>() == "parallel"
                    ? Route::Parallel
                    : Route::Autoregressive;
      t.tokens_emitted = j.at("tokens").get<int>();
      t.accepted = j.at("accepted").get<int>();
      t.tree_size = j.at("tree_size").get<int>();
      t.head_block_execs = j.at("head_blocks").get<int>();
      t.backbone_forwards = j.at("forwards").get<int>();
      t.wall_ns = j.at("wall_ns").get<std::int64_t>();
      runs.back().traces.push_back(t);
    } else {
      throw DataError("unknown trace line type: " + type);
    }
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Analyses
// ---------------------------------------------------------------------------

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * (double(i) + double(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  check_shape(x.size() == y.size(), "spearman expects paired samples");
  if (x.size() < 2) return 0.0;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = double(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

EntropyAcceptanceAnalysis entropy_acceptance_analysis(
    const std::vector<StepTrace>& traces) {
  EntropyAcceptanceAnalysis out;
  std::map<int, std::pair<std::int64_t, double>> acc;  // accepted -> (n, sum)
  std::vector<double> es, as;
  for (const auto& t : traces) {
    if (t.route != Route::Parallel) continue;
    out.parallel_steps += 1;
    auto& slot = acc[t.accepted];
    slot.first += 1;
    slot.second += t.entropy;
    es.push_back(t.entropy);
    as.push_back(double(t.accepted));
  }
  for (const auto& [k, v] : acc)
    out.buckets.push_back({k, v.first, v.second / double(v.first)});
  out.correlation = spearman(es, as);
  out.sufficient = out.parallel_steps >= 30;
  return out;
}

double zero_accept_proportion(const std::vector<StepTrace>& traces) {
  std::int64_t parallel = 0, zero = 0;
  for (const auto& t : traces) {
    if (t.route != Route::Parallel) continue;
    ++parallel;
    if (t.accepted == 0) ++zero;
  }
  return parallel == 0 ? 0.0 : double(zero) / double(parallel);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

namespace {

struct Tally {
  std::int64_t tokens = 0;
  std::int64_t forwards = 0;
  std::int64_t steps = 0;
  std::int64_t parallel_steps = 0;
  std::int64_t zero_accept_steps = 0;
  std::int64_t head_blocks = 0;
  std::int64_t wall_ns = 0;
  double wall_seconds = 0.0;

  void add(const BenchRun& r) {
    std::int64_t run_tokens = 0;
    for (const auto& t : r.traces) {
      run_tokens += t.tokens_emitted;
      forwards += t.backbone_forwards;
      steps += 1;
      wall_ns += t.wall_ns;
      head_blocks += t.head_block_execs;
      if (t.route == Route::Parallel) {
        parallel_steps += 1;
        if (t.accepted == 0) zero_accept_steps += 1;
      }
    }
    if (run_tokens != r.emitted)
      throw DataError("trace token sum does not match emitted count");
    tokens += run_tokens;
    wall_seconds += r.wall_seconds;
  }
  double tpf() const { return forwards == 0 ? 0.0 : double(tokens) / double(forwards); }
  double tps() const {
    return wall_seconds == 0.0 ? 0.0 : double(tokens) / wall_seconds;
  }
  double zero_accept() const {
    return parallel_steps == 0
               ? 0.0
               : double(zero_accept_steps) / double(parallel_steps);
  }
};

}  // namespace

BenchReport build_report(const std::vector<BenchRun>& runs) {
  // Group by configuration label, preserving first-seen order but placing
  // vanilla first so speedups are well-defined.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const BenchRun*>> by_config;
  for (const auto& r : runs) {
    RunSpec spec;
    spec.approach = r.approach;
    spec.gated = r.gated;
    spec.tree_paths = r.tree_paths;
    const std::string label = spec.label();
    if (!by_config.count(label)) order.push_back(label);
    by_config[label].push_back(&r);
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const std::string& a, const std::string& b) {
                     return (a == "vanilla") > (b == "vanilla");
                   });

  BenchReport report;
  Tally vanilla_tally;
  bool have_vanilla = false;

  for (const auto& label : order) {
    const auto& group = by_config[label];
    ConfigAggregate agg;
    agg.approach = group.front()->approach;
    agg.gated = group.front()->gated;
    agg.tree_paths = group.front()->tree_paths;
    agg.label = label;

    Tally total;
    std::map<std::string, Tally> per_cat;
    std::vector<StepTrace> all_steps;
    for (const auto* r : group) {
      total.add(*r);
      per_cat[r->category].add(*r);
      all_steps.insert(all_steps.end(), r->traces.begin(), r->traces.end());
    }
    agg.tokens_per_forward = total.tpf();
    agg.tokens_per_second = total.tps();
    agg.zero_accept = total.zero_accept();
    agg.mean_step_latency_ms =
        total.steps == 0 ? 0.0
                         : double(total.wall_ns) / double(total.steps) / 1e6;
    agg.head_block_execs = total.head_blocks;
    agg.tokens = total.tokens;
    agg.steps = total.steps;
    agg.parallel_steps = total.parallel_steps;
    agg.ar_steps = total.steps - total.parallel_steps;
    agg.entropy_analysis = entropy_acceptance_analysis(all_steps);
    for (const auto& [cat, t] : per_cat) {
      CategoryStats cs;
      cs.tokens_per_forward = t.tpf();
      cs.tokens_per_second = t.tps();
      cs.zero_accept = t.zero_accept();
      cs.tokens = t.tokens;
      cs.steps = t.steps;
      cs.parallel_steps = t.parallel_steps;
      agg.per_category[cat] = cs;
    }

    if (agg.approach == "vanilla" && !have_vanilla) {
      vanilla_tally = total;
      have_vanilla = true;
    }
    report.configs.push_back(std::move(agg));
  }

  for (auto& agg : report.configs) {
    if (have_vanilla && vanilla_tally.forwards > 0) {
      agg.speedup_tokens_per_forward =
          agg.tokens_per_forward / vanilla_tally.tpf();
      agg.speedup_wall = vanilla_tally.tps() == 0.0
                             ? 0.0
                             : agg.tokens_per_second / vanilla_tally.tps();
    }
    // Accounting identities hold on every report.
    if (agg.zero_accept < 0.0 || agg.zero_accept > 1.0)
      throw DataError("zero-accept proportion out of [0, 1]");
    if (agg.approach == "vanilla" && have_vanilla &&
        agg.speedup_tokens_per_forward != 1.0)
      throw DataError("vanilla self-speedup must be exactly 1.0");
  }
  return report;
}

nlohmann::json BenchReport::to_json() const {
  nlohmann::json out;
  // Large-model reference values, included for context in every report;
  // desk-scale runs are compared against trends, not these numbers.
  out["reference_constants"] = {
      {"tokens_per_second", 80.35},
      {"speedup_vs_vanilla", 2.12},
      {"zero_accept_avg", 0.1838},
      {"entropy_threshold_bits", 0.59},
      {"note", "7B-chat-model reference values; desk-scale runs reproduce "
               "trends, not magnitudes"}};
  out["configs"] = nlohmann::json::array();
  for (const auto& c : configs) {
    nlohmann::json j = {{"label", c.label},
                        {"approach", c.approach},
                        {"gated", c.gated},
                        {"tree_paths", c.tree_paths},
                        {"tokens_per_forward", c.tokens_per_forward},
                        {"tokens_per_second", c.tokens_per_second},
                        {"speedup_tokens_per_forward",
                         c.speedup_tokens_per_forward},
                        {"speedup_wall", c.speedup_wall},
                        {"zero_accept", c.zero_accept},
                        {"mean_step_latency_ms", c.mean_step_latency_ms},
                        {"head_block_execs", c.head_block_execs},
                        {"tokens", c.tokens},
                        {"steps", c.steps},
                        {"parallel_steps", c.parallel_steps},
                        {"ar_steps", c.ar_steps},
                        {"entropy_spearman", c.entropy_analysis.correlation},
                        {"entropy_samples_sufficient",
                         c.entropy_analysis.sufficient}};
    j["entropy_buckets"] = nlohmann::json::array();
    for (const auto& b : c.entropy_analysis.buckets)
      j["entropy_buckets"].push_back({{"accepted", b.accepted},
                                      {"steps", b.steps},
                                      {"mean_entropy", b.mean_entropy}});
    j["per_category"] = nlohmann::json::object();
    for (const auto& [cat, cs] : c.per_category)
      j["per_category"][cat] = {{"tokens_per_forward", cs.tokens_per_forward},
                                {"tokens_per_second", cs.tokens_per_second},
                                {"zero_accept", cs.zero_accept},
                                {"tokens", cs.tokens},
                                {"steps", cs.steps},
                                {"parallel_steps", cs.parallel_steps}};
    out["configs"].push_back(std::move(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

std::vector<BenchRun> run_bench(const BackboneModel& model,
                                const HeadStack* medusa,
                                const HeadStack* cerberus,
                                const PromptSuite& suite,
                                const std::vector<RunSpec>& specs,
                                const BenchSettings& settings) {
  struct Job {
    const RunSpec* spec;
    const std::string* category;
    const std::string* prompt;
    int prompt_index;
    std::size_t slot;
  };
  std::vector<Job> jobs;
  for (const auto& spec : specs) {
    if (spec.approach != "vanilla" && spec.approach != "medusa" &&
        spec.approach != "cerberus")
      throw ConfigError("unknown approach: " + spec.approach);
    if (spec.approach == "medusa" && !medusa)
      throw ConfigError("medusa heads checkpoint required for this spec");
    if (spec.approach == "cerberus" && !cerberus)
      throw ConfigError("cerberus heads checkpoint required for this spec");
    for (const auto& [cat, prompts] : suite.categories)
      for (std::size_t p = 0; p < prompts.size(); ++p)
        jobs.push_back({&spec, &cat, &prompts[p], int(p), jobs.size()});
  }

  std::vector<BenchRun> runs(jobs.size());
  auto run_job = [&](const Job& job) {
    const HeadStack* heads = nullptr;
    if (job.spec->approach == "medusa") heads = medusa;
    if (job.spec->approach == "cerberus") heads = cerberus;
    GateConfig gate = job.spec->gate;
    gate.enabled = job.spec->gated;

    DecodeSession session(model, heads, gate, job.spec->templates,
                          settings.max_tokens, settings.stop_token,
                          settings.begin_token, 1);
    session.prefill(encode_bytes(*job.prompt));
    const auto t0 = std::chrono::steady_clock::now();
    while (!session.finished()) session.decode_step();
    const auto t1 = std::chrono::steady_clock::now();

    BenchRun& r = runs[job.slot];
    r.approach = job.spec->approach;
    r.gated = job.spec->gated;
    r.tree_paths = job.spec->tree_paths;
    r.category = *job.category;
    r.prompt_index = job.prompt_index;
    r.prompt_len = int(job.prompt->size());
    r.emitted = session.emitted_count();
    r.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    r.traces = session.traces();
  };

  if (settings.threads > 1) {
    std::vector<std::thread> workers;
    const int nw = std::min<int>(settings.threads, int(jobs.size()));
    for (int w = 0; w < nw; ++w)
      workers.emplace_back([&, w]() {
        for (std::size_t i = std::size_t(w); i < jobs.size(); i += std::size_t(nw))
          run_job(jobs[i]);
      });
    for (auto& t : workers) t.join();
  } else {
    for (const auto& job : jobs) run_job(job);
  }
  return runs;
}

// ---------------------------------------------------------------------------
// CSV emitters
// ---------------------------------------------------------------------------

namespace {

std::ofstream open_csv(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write csv: " + path);
  return f;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

void write_zero_accept_csv(const BenchReport& report,
                           const std::string& path) {
  auto f = open_csv(path);
  f << "config,category,zero_accept_proportion\n";
  for (const auto& c : report.configs) {
    if (c.approach == "vanilla") continue;
    f << c.label << ",avg," << fmt(c.zero_accept) << "\n";
    for (const auto& [cat, cs] : c.per_category)
      f << c.label << "," << cat << "," << fmt(cs.zero_accept) << "\n";
  }
}

void write_entropy_buckets_csv(const BenchReport& report,
                               const std::string& path) {
  auto f = open_csv(path);
  f << "config,accepted_tokens,steps,mean_entropy_bits,spearman\n";
  for (const auto& c : report.configs) {
    if (c.approach == "vanilla") continue;
    for (const auto& b : c.entropy_analysis.buckets)
      f << c.label << "," << b.accepted << "," << b.steps << ","
        << fmt(b.mean_entropy) << "," << fmt(c.entropy_analysis.correlation)
        << "\n";
  }
}

void write_head_accuracy_csv(
    const std::vector<std::pair<std::string, HeadEvalTable>>& tables,
    const std::string& path) {
  auto f = open_csv(path);
  f << "paradigm,head,k,topk_accuracy\n";
  for (const auto& [name, table] : tables)
    for (int h = 0; h < table.n_heads; ++h)
      for (int k = 0; k < table.top_k; ++k)
        f << name << "," << h << "," << (k + 1) << ","
          << fmt(table.topk_acc[std::size_t(h)][std::size_t(k)]) << "\n";
}

void write_speed_csv(const BenchReport& report, const std::string& path) {
  auto f = open_csv(path);
  f << "config,category,tokens_per_second,tokens_per_forward,"
       "speedup_tokens_per_forward,speedup_wall\n";
  for (const auto& c : report.configs) {
    f << c.label << ",avg," << fmt(c.tokens_per_second) << ","
      << fmt(c.tokens_per_forward) << "," << fmt(c.speedup_tokens_per_forward)
      << "," << fmt(c.speedup_wall) << "\n";
    for (const auto& [cat, cs] : c.per_category)
      f << c.label << "," << cat << "," << fmt(cs.tokens_per_second) << ","
        << fmt(cs.tokens_per_forward) << ",,\n";
  }
}

}  // namespace cerberus
