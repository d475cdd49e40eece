// cerberus: desk-scale speculative parallel decoding on a toy byte-level
// transformer. Subcommands cover training, decoding, benchmarking and the
// supporting utilities; see README.md for a walkthrough.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "cerberus/bench.hpp"
#include "cerberus/checkpoint.hpp"
#include "cerberus/config.hpp"
#include "cerberus/data.hpp"
#include "cerberus/engine.hpp"
#include "cerberus/trainer.hpp"
#include "cerberus/tree.hpp"

namespace fs = std::filesystem;
using namespace cerberus;

namespace {

struct CommonArgs {
  std::string config_file;
  std::map<std::string, std::string> overrides;
};

// Every registry key becomes a flag of the same (dotted) name; values are
// applied over the config file, which is applied over defaults.
void attach_config_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_file, "JSON config file");
  for (const auto& spec : RunConfig::registry()) {
    const std::string flag = std::string("--") + spec.name;
    cmd->add_option_function<std::string>(
           flag,
           [&args, name = std::string(spec.name)](const std::string& v) {
             args.overrides[name] = v;
           },
           spec.help)
        ->type_name(spec.type == RunConfig::Type::Bool ? "BOOL" : "VALUE");
  }
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_file.empty()) cfg.load_file(args.config_file);
  for (const auto& [k, v] : args.overrides) cfg.set(k, v);
  return cfg;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path is required");
  if (!fs::exists(path)) throw IoError(what + " not found: " + path);
}

BackboneConfig backbone_config_from(const RunConfig& cfg) {
  BackboneConfig c;
  c.vocab_size = int(cfg.get_int("model.vocab_size"));
  c.d_model = int(cfg.get_int("model.d_model"));
  c.n_layers = int(cfg.get_int("model.n_layers"));
  c.n_attn_heads = int(cfg.get_int("model.n_attn_heads"));
  c.max_context = int(cfg.get_int("model.max_context"));
  c.ffn_mult = int(cfg.get_int("model.ffn_mult"));
  c.validate();
  return c;
}

HeadConfig head_config_from(const RunConfig& cfg, Paradigm paradigm) {
  HeadConfig h;
  h.paradigm = paradigm;
  h.n_heads = int(cfg.get_int("heads.count"));
  h.resblocks = int(cfg.get_int("heads.resblocks"));
  h.special_pos = int(cfg.get_int("heads.special_pos"));
  h.top_k = int(cfg.get_int("tree.top_k"));
  h.variant = resblock_variant_from_string(cfg.get_string("heads.resblock_variant"));
  h.validate();
  return h;
}

GateConfig gate_config_from(const RunConfig& cfg) {
  GateConfig g;
  g.enabled = cfg.get_bool("gate.enabled");
  g.threshold = cfg.get_double("gate.threshold");
  g.source = gate_source_from_string(cfg.get_string("gate.source"));
  g.validate();
  return g;
}

TrainConfig train_config_from(const RunConfig& cfg) {
  TrainConfig t;
  t.lr = cfg.get_double("train.lr");
  t.batch = int(cfg.get_int("train.batch"));
  t.steps = int(cfg.get_int("train.steps"));
  t.seq_len = int(cfg.get_int("train.seq_len"));
  t.warmup = int(cfg.get_int("train.warmup"));
  t.min_lr_frac = cfg.get_double("train.min_lr_frac");
  t.lambda_decay = cfg.get_double("train.lambda_decay");
  t.eval_windows = int(cfg.get_int("train.eval_windows"));
  t.log_every = int(cfg.get_int("train.log_every"));
  t.seed = std::uint64_t(cfg.get_int("seed"));
  t.validate();
  return t;
}

TemplateSet templates_from(const RunConfig& cfg, int n_heads) {
  const std::string file = cfg.get_string("tree.template_file");
  const int top_k = int(cfg.get_int("tree.top_k"));
  if (!file.empty()) {
    require_file(file, "template file");
    return TemplateSet::load(file, top_k);
  }
  return select_templates(int(cfg.get_int("tree.paths")), n_heads, top_k,
                          uniform_calibration(n_heads, top_k));
}

std::vector<int> prompt_tokens(const std::string& prompt,
                               const std::string& prompt_file) {
  if (!prompt_file.empty()) {
    std::ifstream f(prompt_file, std::ios::binary);
    if (!f) throw IoError("cannot open prompt file: " + prompt_file);
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    return encode_bytes(text);
  }
  return encode_bytes(prompt);
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_train_backbone(const CommonArgs& common, const std::string& corpus_path,
                       const std::string& out_path) {
  RunConfig cfg = resolve_config(common);
  require_file(corpus_path, "corpus");
  Corpus corpus = load_corpus(corpus_path, cfg.get_double("train.eval_fraction"));
  Rng rng(std::uint64_t(cfg.get_int("seed")));
  BackboneModel model = BackboneModel::init(backbone_config_from(cfg), rng);
  TrainStats stats = train_backbone(model, corpus, train_config_from(cfg));
  Checkpoint ck = model.to_checkpoint();
  ck.config["corpus_hash"] = corpus.source_hash;
  ck.config["final_eval_loss"] = stats.final_eval_loss;
  ck.save(out_path);
  std::fprintf(stderr, "wrote %s (eval loss %.4f -> %.4f)\n", out_path.c_str(),
               stats.init_eval_loss, stats.final_eval_loss);
  return 0;
}

int cmd_train_heads(const CommonArgs& common, const std::string& backbone_path,
                    const std::string& corpus_path, const std::string& paradigm,
                    const std::string& out_path) {
  RunConfig cfg = resolve_config(common);
  require_file(backbone_path, "backbone checkpoint");
  require_file(corpus_path, "corpus");
  BackboneModel model =
      BackboneModel::from_checkpoint(Checkpoint::load(backbone_path));
  Corpus corpus = load_corpus(corpus_path, cfg.get_double("train.eval_fraction"));
  Rng rng(std::uint64_t(cfg.get_int("seed")) ^ 0x9e3779b9ull);
  HeadConfig hc = head_config_from(cfg, paradigm_from_string(paradigm));
  model.set_requires_grad(false);
  HeadStack stack = init_head_stack(hc, model.cfg.d_model, model.cfg.vocab_size,
                                    model.lm_head, rng);
  TrainStats stats = train_heads(stack, model, corpus, train_config_from(cfg));
  Checkpoint ck = heads_to_checkpoint(stack, model.weights_hash());
  ck.config["final_eval_loss"] = stats.final_eval_loss;
  ck.save(out_path);
  std::fprintf(stderr, "wrote %s (weighted eval loss %.4f -> %.4f)\n",
               out_path.c_str(), stats.init_eval_loss, stats.final_eval_loss);
  return 0;
}

int cmd_decode(const CommonArgs& common, const std::string& backbone_path,
               const std::string& heads_path, const std::string& prompt,
               const std::string& prompt_file, const std::string& out_path) {
  RunConfig cfg = resolve_config(common);
  require_file(backbone_path, "backbone checkpoint");
  BackboneModel model =
      BackboneModel::from_checkpoint(Checkpoint::load(backbone_path));
  model.set_requires_grad(false);

  const std::string paradigm = cfg.get_string("decode.paradigm");
  HeadStack stack;
  const HeadStack* heads = nullptr;
  TemplateSet templates;
  if (paradigm != "vanilla") {
    require_file(heads_path, "heads checkpoint");
    stack = heads_from_checkpoint(Checkpoint::load(heads_path));
    if (to_string(stack.cfg.paradigm) != paradigm)
      throw ConfigError("heads checkpoint paradigm is " +
                        to_string(stack.cfg.paradigm) + ", requested " +
                        paradigm);
    for (auto& [n, t] : named_params(stack)) t->set_requires_grad(false);
    heads = &stack;
    templates = templates_from(cfg, stack.cfg.n_heads);
  }

  DecodeResult res = decode(
      model, heads, gate_config_from(cfg), templates,
      prompt_tokens(prompt, prompt_file), int(cfg.get_int("decode.max_tokens")),
      int(cfg.get_int("decode.stop_token")),
      int(cfg.get_int("decode.begin_token")),
      int(cfg.get_int("heads.threads")));

  const std::string text = decode_bytes(res.tokens);
  std::fwrite(text.data(), 1, text.size(), stdout);
  std::fflush(stdout);
  if (!out_path.empty()) {
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw IoError("cannot write output file: " + out_path);
    f.write(text.data(), std::streamsize(text.size()));
  }
  std::fprintf(stderr, "\n[decode] %d tokens, %zu steps, %.3f tokens/forward\n",
               int(res.tokens.size()), res.traces.size(),
               tokens_per_forward(res.traces));
  return 0;
}

std::vector<RunSpec> reference_specs(const RunConfig& cfg, int n_heads) {
  std::vector<int> path_budgets;
  {
    std::string list = cfg.get_string("bench.tree_paths");
    std::size_t pos = 0;
    while (pos < list.size()) {
      const std::size_t comma = list.find(',', pos);
      const std::string tok = list.substr(pos, comma - pos);
      if (!tok.empty()) path_budgets.push_back(std::stoi(tok));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (path_budgets.empty()) throw ConfigError("bench.tree_paths is empty");
  }
  const int top_k = int(cfg.get_int("tree.top_k"));
  GateConfig gate = gate_config_from(cfg);

  std::vector<RunSpec> specs;
  RunSpec vanilla;
  vanilla.approach = "vanilla";
  specs.push_back(vanilla);
  for (int paths : path_budgets) {
    TemplateSet set = select_templates(paths, n_heads, top_k,
                                       uniform_calibration(n_heads, top_k));
    for (const std::string approach : {"medusa", "cerberus"}) {
      RunSpec ungated;
      ungated.approach = approach;
      ungated.gated = false;
      ungated.gate = gate;
      ungated.tree_paths = paths;
      ungated.templates = set;
      specs.push_back(ungated);
      if (approach == "cerberus") {
        RunSpec gated = ungated;
        gated.gated = true;
        specs.push_back(gated);
      }
    }
  }
  return specs;
}

int cmd_bench(const CommonArgs& common, const std::string& backbone_path,
              const std::string& medusa_path, const std::string& cerberus_path,
              const std::string& suite_path, const std::string& corpus_path) {
  RunConfig cfg = resolve_config(common);
  require_file(backbone_path, "backbone checkpoint");
  require_file(medusa_path, "medusa heads checkpoint");
  require_file(cerberus_path, "cerberus heads checkpoint");
  require_file(suite_path, "prompt suite");
  require_file(corpus_path, "corpus");

  BackboneModel model =
      BackboneModel::from_checkpoint(Checkpoint::load(backbone_path));
  model.set_requires_grad(false);
  HeadStack medusa = heads_from_checkpoint(Checkpoint::load(medusa_path));
  HeadStack cerb = heads_from_checkpoint(Checkpoint::load(cerberus_path));
  for (auto& [n, t] : named_params(medusa)) t->set_requires_grad(false);
  for (auto& [n, t] : named_params(cerb)) t->set_requires_grad(false);
  if (medusa.cfg.paradigm != Paradigm::Medusa ||
      cerb.cfg.paradigm != Paradigm::Cerberus)
    throw ConfigError("heads checkpoints do not match their roles");

  PromptSuite suite = load_prompt_suite(suite_path);
  Corpus corpus = load_corpus(corpus_path, cfg.get_double("train.eval_fraction"));

  const std::string out_dir = cfg.get_string("out_dir");
  fs::create_directories(out_dir);

  BenchSettings settings;
  settings.max_tokens = int(cfg.get_int("bench.max_tokens"));
  settings.stop_token = int(cfg.get_int("decode.stop_token"));
  settings.begin_token = int(cfg.get_int("decode.begin_token"));
  settings.threads = int(cfg.get_int("bench.threads"));

  const auto specs = reference_specs(cfg, cerb.cfg.n_heads);
  std::fprintf(stderr, "[bench] %zu configs x %zu prompts\n", specs.size(),
               suite.total_prompts());
  const auto runs = run_bench(model, &medusa, &cerb, suite, specs, settings);
  const BenchReport report = build_report(runs);

  TrainConfig tc = train_config_from(cfg);
  std::vector<std::pair<std::string, HeadEvalTable>> tables;
  tables.emplace_back("medusa", eval_head_topk(medusa, model, corpus, tc,
                                               medusa.cfg.top_k));
  tables.emplace_back("cerberus",
                      eval_head_topk(cerb, model, corpus, tc, cerb.cfg.top_k));

  save_traces_jsonl(runs, out_dir + "/traces.jsonl");
  {
    std::ofstream f(out_dir + "/report.json");
    nlohmann::json j = report.to_json();
    j["head_eval"] = nlohmann::json::object();
    for (const auto& [name, table] : tables) {
      j["head_eval"][name] = {{"positions", table.positions},
                              {"topk_acc", table.topk_acc},
                              {"rank_freq", table.rank_freq}};
    }
    f << j.dump(2) << "\n";
  }
  write_zero_accept_csv(report, out_dir + "/table1.csv");
  write_entropy_buckets_csv(report, out_dir + "/fig3.csv");
  write_head_accuracy_csv(tables, out_dir + "/fig5.csv");
  write_speed_csv(report, out_dir + "/table2.csv");

  for (const auto& c : report.configs)
    std::fprintf(stderr,
                 "[bench] %-24s tokens/fwd %.3f  tokens/s %.0f  speedup %.2fx  "
                 "zero-accept %.3f\n",
                 c.label.c_str(), c.tokens_per_forward, c.tokens_per_second,
                 c.speedup_tokens_per_forward, c.zero_accept);
  std::fprintf(stderr, "[bench] wrote %s/{report.json,traces.jsonl,table1.csv,"
                       "fig3.csv,fig5.csv,table2.csv}\n",
               out_dir.c_str());
  return 0;
}

int cmd_analyze(const CommonArgs& common, const std::string& traces_path) {
  RunConfig cfg = resolve_config(common);
  require_file(traces_path, "trace file");
  const auto runs = load_traces_jsonl(traces_path);
  const BenchReport report = build_report(runs);
  const std::string out_dir = cfg.get_string("out_dir");
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir + "/report.json");
    f << report.to_json().dump(2) << "\n";
  }
  write_zero_accept_csv(report, out_dir + "/table1.csv");
  write_entropy_buckets_csv(report, out_dir + "/fig3.csv");
  write_speed_csv(report, out_dir + "/table2.csv");
  std::fprintf(stderr, "[analyze] %zu runs -> %s\n", runs.size(),
               out_dir.c_str());
  return 0;
}

int cmd_calibrate(const CommonArgs& common, const std::string& backbone_path,
                  const std::string& heads_path, const std::string& suite_path,
                  const std::string& out_path) {
  RunConfig cfg = resolve_config(common);
  require_file(backbone_path, "backbone checkpoint");
  require_file(heads_path, "heads checkpoint");
  require_file(suite_path, "prompt suite");

  BackboneModel model =
      BackboneModel::from_checkpoint(Checkpoint::load(backbone_path));
  model.set_requires_grad(false);
  HeadStack stack = heads_from_checkpoint(Checkpoint::load(heads_path));
  for (auto& [n, t] : named_params(stack)) t->set_requires_grad(false);
  PromptSuite suite = load_prompt_suite(suite_path);
  TemplateSet templates = templates_from(cfg, stack.cfg.n_heads);

  GateConfig gate = gate_config_from(cfg);
  gate.enabled = true;
  const int K = gate.source == GateSource::Hidden ? model.cfg.d_model
                                                  : model.cfg.vocab_size;
  const double hi = std::log2(double(K));
  const int grid = int(cfg.get_int("calibrate.grid_points"));
  const int max_tokens = int(cfg.get_int("calibrate.max_tokens"));

  double best_t = 0.0, best_tpf = -1.0;
  for (int i = 0; i < grid; ++i) {
    gate.threshold = hi * double(i) / double(grid - 1);
    double tokens = 0.0, forwards = 0.0;
    for (const auto& [cat, prompts] : suite.categories)
      for (const auto& p : prompts) {
        DecodeResult res =
            decode(model, &stack, gate, templates, encode_bytes(p), max_tokens,
                   int(cfg.get_int("decode.stop_token")),
                   int(cfg.get_int("decode.begin_token")));
        for (const auto& t : res.traces) {
          tokens += t.tokens_emitted;
          forwards += t.backbone_forwards;
        }
      }
    const double tpf = forwards == 0.0 ? 0.0 : tokens / forwards;
    std::fprintf(stderr, "[calibrate] T=%.4f tokens/forward %.4f\n",
                 gate.threshold, tpf);
    if (tpf > best_tpf) {
      best_tpf = tpf;
      best_t = gate.threshold;
    }
  }
  std::printf("best_threshold %.6f tokens_per_forward %.6f\n", best_t,
              best_tpf);
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw IoError("cannot write calibration file: " + out_path);
    nlohmann::json j = {{"gate.threshold", best_t}};
    f << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_gen_templates(const CommonArgs& common, int paths, int top_k,
                      int n_heads, const std::string& calibration_path,
                      const std::string& calibration_paradigm,
                      const std::string& out_path) {
  resolve_config(common);  // validates flags even though none are used here
  std::vector<std::vector<double>> calib;
  if (!calibration_path.empty()) {
    require_file(calibration_path, "calibration file");
    std::ifstream f(calibration_path);
    nlohmann::json j;
    f >> j;
    if (j.contains("head_eval"))
      j = j.at("head_eval").at(calibration_paradigm);
    calib = j.at("rank_freq").get<std::vector<std::vector<double>>>();
  } else {
    calib = uniform_calibration(n_heads, top_k);
  }
  TemplateSet set = select_templates(paths, n_heads, top_k, calib);
  set.save(out_path);
  std::fprintf(stderr, "[gen-templates] wrote %zu paths to %s\n", set.size(),
               out_path.c_str());
  return 0;
}

int cmd_inspect(const std::string& ckpt_path) {
  require_file(ckpt_path, "checkpoint");
  Checkpoint ck = Checkpoint::load(ckpt_path);
  std::printf("kind: %s\n", ck.kind.c_str());
  std::printf("config: %s\n", ck.config.dump(2).c_str());
  std::int64_t total = 0;
  std::printf("%-28s %-16s %s\n", "tensor", "shape", "floats");
  for (const auto& [name, t] : ck.tensors) {
    std::string shape = "[";
    for (std::size_t i = 0; i < t.shape().size(); ++i)
      shape += (i ? "x" : "") + std::to_string(t.shape()[i]);
    shape += "]";
    std::printf("%-28s %-16s %lld\n", name.c_str(), shape.c_str(),
                (long long)t.numel());
    total += t.numel();
  }
  std::printf("total parameters: %lld\n", (long long)total);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale speculative parallel decoding engine"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string corpus_path, backbone_path, heads_path, medusa_path,
      cerberus_path, suite_path, out_path, prompt, prompt_file, traces_path,
      ckpt_path, calibration_path, calibration_paradigm = "cerberus";
  int gt_paths = 63, gt_topk = 10, gt_heads = 4;

  auto* tb = app.add_subcommand("train-backbone", "pretrain the toy backbone");
  attach_config_flags(tb, common);
  tb->add_option("--corpus", corpus_path, "UTF-8 corpus file")->required();
  tb->add_option("--out", out_path, "output checkpoint")->required();

  auto* th = app.add_subcommand("train-heads",
                                "train decoding heads on a frozen backbone");
  attach_config_flags(th, common);
  th->add_option("--backbone", backbone_path, "backbone checkpoint")->required();
  th->add_option("--corpus", corpus_path, "UTF-8 corpus file")->required();
  std::string paradigm = "cerberus";
  th->add_option("--paradigm", paradigm, "medusa | cerberus");
  th->add_option("--out", out_path, "output checkpoint")->required();

  auto* dec = app.add_subcommand("decode", "generate text");
  attach_config_flags(dec, common);
  dec->add_option("--backbone", backbone_path, "backbone checkpoint")->required();
  dec->add_option("--heads", heads_path, "heads checkpoint");
  dec->add_option("--prompt", prompt, "prompt text");
  dec->add_option("--prompt-file", prompt_file, "prompt file (raw bytes)");
  dec->add_option("--out", out_path, "also write the continuation here");
  dec->add_option("--paradigm", [&common](const std::vector<std::string>& v) {
    common.overrides["decode.paradigm"] = v.front();
    return true;
  }, "alias for --decode.paradigm");

  auto* be = app.add_subcommand("bench", "run the benchmark matrix");
  attach_config_flags(be, common);
  be->add_option("--backbone", backbone_path, "backbone checkpoint")->required();
  be->add_option("--medusa-heads", medusa_path, "medusa heads checkpoint")
      ->required();
  be->add_option("--cerberus-heads", cerberus_path, "cerberus heads checkpoint")
      ->required();
  be->add_option("--suite", suite_path, "prompt suite JSON")->required();
  be->add_option("--corpus", corpus_path, "corpus (for head accuracy eval)")
      ->required();

  auto* an = app.add_subcommand("analyze", "rebuild reports from traces");
  attach_config_flags(an, common);
  an->add_option("--traces", traces_path, "traces.jsonl")->required();

  auto* ca = app.add_subcommand("calibrate-gate",
                                "grid-search the entropy threshold");
  attach_config_flags(ca, common);
  ca->add_option("--backbone", backbone_path, "backbone checkpoint")->required();
  ca->add_option("--heads", heads_path, "heads checkpoint")->required();
  ca->add_option("--suite", suite_path, "calibration prompt suite")->required();
  ca->add_option("--out", out_path, "write {\"gate.threshold\": best} here");

  auto* gt = app.add_subcommand("gen-templates", "emit a path template file");
  attach_config_flags(gt, common);
  gt->add_option("--paths", gt_paths, "path budget");
  gt->add_option("--top-k", gt_topk, "candidates per head");
  gt->add_option("--heads", gt_heads, "head count");
  gt->add_option("--calibration", calibration_path,
                 "head eval JSON with rank_freq (default: uniform)");
  gt->add_option("--calibration-paradigm", calibration_paradigm,
                 "which paradigm's table to use from a bench report");
  gt->add_option("--out", out_path, "output template JSON")->required();

  auto* in = app.add_subcommand("inspect-ckpt", "dump a checkpoint header");
  in->add_option("--ckpt", ckpt_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 2;
  }

  try {
    if (tb->parsed()) return cmd_train_backbone(common, corpus_path, out_path);
    if (th->parsed())
      return cmd_train_heads(common, backbone_path, corpus_path, paradigm,
                             out_path);
    if (dec->parsed())
      return cmd_decode(common, backbone_path, heads_path, prompt, prompt_file,
                        out_path);
    if (be->parsed())
      return cmd_bench(common, backbone_path, medusa_path, cerberus_path,
                       suite_path, corpus_path);
    if (an->parsed()) return cmd_analyze(common, traces_path);
    if (ca->parsed())
      return cmd_calibrate(common, backbone_path, heads_path, suite_path,
                           out_path);
    if (gt->parsed())
      return cmd_gen_templates(common, gt_paths, gt_topk, gt_heads,
                               calibration_path, calibration_paradigm,
                               out_path);
    if (in->parsed()) return cmd_inspect(ckpt_path);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: io: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: runtime: %s\n", e.what());
    return 1;
  }
  return 0;
}
