// Writes the synthetic demo corpus and prompt suite used by the README
// walkthrough. Both are deterministic in the seed.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "cerberus/data.hpp"

int main(int argc, char** argv) {
  std::string out_dir = "assets";
  std::uint64_t seed = 7;
  std::size_t bytes = 262144;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--out") out_dir = argv[i + 1];
    else if (flag == "--seed") seed = std::stoull(argv[i + 1]);
    else if (flag == "--bytes") bytes = std::stoull(argv[i + 1]);
    else {
      std::fprintf(stderr, "usage: %s [--out DIR] [--seed N] [--bytes N]\n",
                   argv[0]);
      return 2;
    }
  }
  std::filesystem::create_directories(out_dir);
  const std::string corpus = cerberus::make_synthetic_corpus(seed, bytes);
  std::ofstream(out_dir + "/corpus.txt", std::ios::binary)
      .write(corpus.data(), std::streamsize(corpus.size()));
  cerberus::save_prompt_suite(cerberus::make_synthetic_prompt_suite(seed + 1, 3),
                              out_dir + "/prompts.json");
  std::printf("wrote %s/corpus.txt (%zu bytes) and %s/prompts.json\n",
              out_dir.c_str(), corpus.size(), out_dir.c_str());
  return 0;
}
