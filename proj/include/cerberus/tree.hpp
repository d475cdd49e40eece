#pragma once

#include <string>
#include <vector>

#include "cerberus/backbone.hpp"

namespace cerberus {

// A path template (r_1, ..., r_L) reads "head j's r_j-th best candidate at
// depth j". Template sets are prefix-closed, so templates and tree nodes
// are in one-to-one correspondence.
using PathTemplate = std::vector<int>;

struct TemplateSet {
  std::vector<PathTemplate> templates;  // lexicographically sorted
  int top_k = 10;

  std::size_t size() const { return templates.size(); }
  int max_depth() const;

  // Non-empty, ranks within top_k, no duplicates, prefix-closed.
  void validate() const;

  static TemplateSet load(const std::string& path, int top_k);
  void save(const std::string& path) const;

  // Every rank combination up to max_depth: sum over j of k^j paths.
  static TemplateSet full(int n_heads, int top_k);
};

// Greedy template selection: grow a prefix-closed set one path at a time,
// always taking the frontier candidate with the highest estimated joint
// acceptance probability (product of per-head per-rank frequencies,
// independence assumed). Lexicographic tie-break. A budget beyond the full
// space is clamped with a warning on stderr.
TemplateSet select_templates(int budget, int n_heads, int top_k,
                             const std::vector<std::vector<double>>& calib);

// Rank frequencies that reproduce pure lexicographic "shallow first" greedy
// selection when no measured calibration is available.
std::vector<std::vector<double>> uniform_calibration(int n_heads, int top_k);

struct TreeNode {
  int token = 0;
  int source_head = 0;  // 0-based head whose top-k produced this node
  int rank = 0;
  int parent = -1;  // -1: first tree level (hangs off the committed context)
  int depth = 1;    // root level is depth 1
  std::vector<int> children;
};

struct CandidateTree {
  std::vector<TreeNode> nodes;  // topological (lexicographic) order
  std::vector<int> roots;       // depth-1 node ids

  int size() const { return int(nodes.size()); }
  std::vector<int> tokens() const;
  // Ancestor chain including the node itself, root first.
  std::vector<int> root_path(int node) const;
  // node x node self+ancestor mask (lower-triangular in node order).
  std::vector<std::uint8_t> ancestor_mask() const;
};

// One node per template; node tokens come from per_head_topk[depth-1][rank].
CandidateTree build_tree(const TemplateSet& templates,
                         const std::vector<std::vector<int>>& per_head_topk);

// Greedy tree verification result. `accepted` are head-proposed tokens on
// the surviving root path; the bonus token is the backbone's next-token
// prediction at the deepest accepted position and is always emitted.
struct VerifyResult {
  std::vector<int> accepted;
  std::vector<int> accepted_node_ids;
  int bonus_token = -1;
  int tree_size = 0;
  std::vector<float> h_last;  // at the deepest accepted position
  std::vector<float> logits;  // same position (produced the bonus)
};

// Appends [root_token | tree tokens] to the cache in one masked forward,
// walks the tree greedily (a node survives iff its token is the argmax of
// its parent's logits; the root row realizes the committed-context logits),
// then compacts the cache to root + accepted rows. The bonus row's K/V are
// intentionally not in the cache afterwards; the engine forwards that
// token as the next step's root.
VerifyResult verify(const CandidateTree& tree, const BackboneModel& model,
                    KvCache& cache, int root_token);

}  // namespace cerberus
