#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cerberus {

// Byte-level corpus: token id == byte value, so encode/decode is the
// identity and the vocabulary is fixed at 256. The eval split is the
// contiguous tail of the file.
struct Corpus {
  std::vector<int> tokens;
  std::size_t split;          // tokens[0, split) train, [split, end) eval
  std::uint64_t source_hash;  // FNV-1a of the raw bytes

  std::size_t train_size() const { return split; }
  std::size_t eval_size() const { return tokens.size() - split; }
};

Corpus load_corpus(const std::string& path, double eval_fraction);
Corpus corpus_from_bytes(const std::string& bytes, double eval_fraction);

std::vector<int> encode_bytes(const std::string& text);
std::string decode_bytes(const std::vector<int>& tokens);

// Named prompt categories; structurally a small task suite, content is
// local toy text.
struct PromptSuite {
  std::vector<std::pair<std::string, std::vector<std::string>>> categories;

  std::size_t total_prompts() const {
    std::size_t n = 0;
    for (const auto& [name, ps] : categories) n += ps.size();
    return n;
  }
};

PromptSuite load_prompt_suite(const std::string& path);
void save_prompt_suite(const PromptSuite& suite, const std::string& path);

// Deterministic synthetic text: eight pattern families (counting runs,
// alphabet cycles, template sentences, multiplication tables, key-value
// records, loop-ish code lines, repeated prose, weighted word salad)
// interleaved in small blocks. Predictable enough for decoding heads to
// learn, varied enough to spread step entropy.
std::string make_synthetic_corpus(std::uint64_t seed, std::size_t n_bytes);

// One category per family; prompts are in-distribution block prefixes.
PromptSuite make_synthetic_prompt_suite(std::uint64_t seed,
                                        int prompts_per_category);

}  // namespace cerberus
