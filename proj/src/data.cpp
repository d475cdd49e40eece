#include "cerberus/data.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cerberus/common.hpp"
#include "cerberus/rng.hpp"

namespace cerberus {

std::vector<int> encode_bytes(const std::string& text) {
  std::vector<int> out(text.size());
  for (std::size_t i = 0; i < text.size(); ++i)
    out[i] = int(static_cast<unsigned char>(text[i]));
  return out;
}

std::string decode_bytes(const std::vector<int>& tokens) {
  std::string out(tokens.size(), '\0');
  for (std::size_t i = 0; i < tokens.size(); ++i)
    out[i] = char(static_cast<unsigned char>(tokens[i]));
  return out;
}

Corpus corpus_from_bytes(const std::string& bytes, double eval_fraction) {
  if (bytes.empty()) throw DataError("corpus is empty");
  if (eval_fraction < 0.0 || eval_fraction >= 1.0)
    throw DataError("eval_fraction must be in [0, 1)");
  Corpus c;
  c.tokens = encode_bytes(bytes);
  const auto eval_n = std::size_t(double(c.tokens.size()) * eval_fraction);
  c.split = c.tokens.size() - eval_n;
  c.source_hash = fnv1a64(bytes.data(), bytes.size());
  return c;
}

Corpus load_corpus(const std::string& path, double eval_fraction) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open corpus file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return corpus_from_bytes(ss.str(), eval_fraction);
}

PromptSuite load_prompt_suite(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open prompt suite: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed prompt suite JSON: ") + e.what());
  }
  if (!j.is_object() || j.empty())
    throw DataError("prompt suite must be a non-empty JSON object");
  PromptSuite suite;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_array() || it.value().empty())
      throw DataError("prompt category '" + it.key() +
                      "' must be a non-empty array");
    std::vector<std::string> prompts;
    for (const auto& p : it.value()) prompts.push_back(p.get<std::string>());
    suite.categories.emplace_back(it.key(), std::move(prompts));
  }
  return suite;
}

void save_prompt_suite(const PromptSuite& suite, const std::string& path) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, prompts] : suite.categories) j[name] = prompts;
  std::ofstream f(path);
  if (!f) throw IoError("cannot write prompt suite: " + path);
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

namespace {

const char* kAdjectives[] = {"quick", "lazy",  "bright", "quiet",
                             "small", "heavy", "clever", "plain"};
const char* kNouns[] = {"fox",   "dog",  "river", "stone",
                        "robot", "bird", "clock", "garden"};
const char* kVerbs[] = {"jumps over", "watches", "follows", "circles",
                        "ignores",    "passes",  "greets",  "measures"};
const char* kNames[] = {"alice", "bruno", "chen", "dara",
                        "emil",  "fatou", "goro", "hana"};
const char* kCities[] = {"paris", "osaka", "lagos", "quito",
                         "oslo",  "perth", "turin", "hanoi"};
const char* kWords[] = {"time", "way",  "year", "work", "life", "hand", "part",
                        "eye",  "place", "case", "point", "group", "fact",
                        "night", "water", "room", "area", "money", "story",
                        "month"};
const char* kProse[] = {
    "the ship sailed east for nine days and nine nights before the crew saw "
    "land again. ",
    "every morning the baker lit the oven, weighed the flour, and set the "
    "loaves in rows. ",
    "rain fell on the roof of the station while the last train waited for "
    "its signal. "};

template <class T, std::size_t N>
const T& pick(Rng& rng, const T (&arr)[N]) {
  return arr[rng.below(N)];
}

void emit_counting(Rng& rng, std::string& out) {
  int n = 10 + int(rng.below(480));
  const int len = 8 + int(rng.below(16));
  for (int i = 0; i < len; ++i) {
    out += std::to_string(n + i);
    out += (i + 1 == len) ? ".\n" : ", ";
  }
}

void emit_alphabet(Rng& rng, std::string& out) {
  static const std::string abc = "abcdefghijklmnopqrstuvwxyz";
  const int start = int(rng.below(26));
  const int reps = 2 + int(rng.below(3));
  for (int r = 0; r < reps; ++r) {
    for (int i = 0; i < 26; ++i) out += abc[std::size_t((start + i) % 26)];
    out += ' ';
  }
  out += '\n';
}

void emit_sentences(Rng& rng, std::string& out) {
  const int n = 2 + int(rng.below(4));
  for (int i = 0; i < n; ++i) {
    out += "the ";
    out += pick(rng, kAdjectives);
    out += ' ';
    out += pick(rng, kNouns);
    out += ' ';
    out += pick(rng, kVerbs);
    out += " the ";
    out += pick(rng, kNouns);
    out += ". ";
  }
  out += '\n';
}

void emit_arithmetic(Rng& rng, std::string& out) {
  const int a = 2 + int(rng.below(11));
  for (int b = 2; b <= 9; ++b) {
    out += std::to_string(a);
    out += " x ";
    out += std::to_string(b);
    out += " = ";
    out += std::to_string(a * b);
    out += '\n';
  }
}

void emit_records(Rng& rng, std::string& out) {
  const int n = 2 + int(rng.below(3));
  for (int i = 0; i < n; ++i) {
    out += "name: ";
    out += pick(rng, kNames);
    out += "; city: ";
    out += pick(rng, kCities);
    out += "; id: ";
    const int id = int(rng.below(100));
    out += (id < 10 ? "000" : "00");
    out += std::to_string(id);
    out += '\n';
  }
}

void emit_code(Rng& rng, std::string& out) {
  const int n = int(rng.below(10));
  out += "for i in range(";
  out += std::to_string(n);
  out += "): print(i)\n";
  out += "x = x + ";
  out += std::to_string(int(rng.below(10)));
  out += "\n";
}

void emit_prose(Rng& rng, std::string& out) { out += pick(rng, kProse); out += '\n'; }

void emit_salad(Rng& rng, std::string& out) {
  const int n = 6 + int(rng.below(10));
  for (int i = 0; i < n; ++i) {
    // Zipf-ish: low indices dominate.
    const auto r = rng.below(64);
    const std::size_t idx = r < 32 ? rng.below(4) : (r < 52 ? 4 + rng.below(8)
                                                            : 12 + rng.below(8));
    out += kWords[idx];
    out += ' ';
  }
  out += ".\n";
}

using EmitFn = void (*)(Rng&, std::string&);
constexpr EmitFn kFamilies[] = {emit_counting, emit_alphabet, emit_sentences,
                                emit_arithmetic, emit_records, emit_code,
                                emit_prose, emit_salad};
const char* kFamilyNames[] = {"counting", "alphabet", "sentences",
                              "arithmetic", "records", "code",
                              "prose", "mixed"};

}  // namespace

std::string make_synthetic_corpus(std::uint64_t seed, std::size_t n_bytes) {
  Rng rng(seed);
  std::string out;
  out.reserve(n_bytes + 256);
  std::size_t family = 0;
  while (out.size() < n_bytes) {
    kFamilies[family % 8](rng, out);
    // Mostly round-robin so every family spans both corpus splits.
    family += 1 + (rng.below(4) == 0 ? 1 : 0);
  }
  out.resize(n_bytes);
  return out;
}

PromptSuite make_synthetic_prompt_suite(std::uint64_t seed,
                                        int prompts_per_category) {
  Rng rng(seed);
  PromptSuite suite;
  for (int f = 0; f < 8; ++f) {
    std::vector<std::string> prompts;
    for (int i = 0; i < prompts_per_category; ++i) {
      std::string block;
      while (block.size() < 48) kFamilies[f](rng, block);
      prompts.push_back(block.substr(0, 24 + rng.below(25)));
    }
    suite.categories.emplace_back(kFamilyNames[f], std::move(prompts));
  }
  return suite;
}

}  // namespace cerberus
