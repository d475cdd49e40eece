#include "cerberus/tree.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <queue>
#include <set>

#include <json.hpp>

#include "cerberus/kernels.hpp"

namespace cerberus {

int TemplateSet::max_depth() const {
  std::size_t m = 0;
  for (const auto& t : templates) m = std::max(m, t.size());
  return int(m);
}

void TemplateSet::validate() const {
  if (templates.empty()) throw ConfigError("template set is empty");
  std::set<PathTemplate> seen;
  for (const auto& t : templates) {
    if (t.empty()) throw ConfigError("empty path template");
    for (int r : t)
      if (r < 0 || r >= top_k)
        throw ConfigError("template rank out of top-k range");
    if (!seen.insert(t).second) throw ConfigError("duplicate path template");
  }
  for (const auto& t : templates) {
    PathTemplate prefix(t.begin(), t.end() - 1);
    if (!prefix.empty() && !seen.count(prefix))
      throw ConfigError("template set is not prefix-closed");
  }
}

TemplateSet TemplateSet::load(const std::string& path, int top_k) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open template file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed template JSON: ") + e.what());
  }
  if (!j.is_array()) throw ConfigError("template file must be a JSON array");
  TemplateSet set;
  set.top_k = top_k;
  for (const auto& arr : j)
    set.templates.push_back(arr.get<std::vector<int>>());
  std::sort(set.templates.begin(), set.templates.end());
  set.validate();
  return set;
}

void TemplateSet::save(const std::string& path) const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& t : templates) j.push_back(t);
  std::ofstream f(path);
  if (!f) throw IoError("cannot write template file: " + path);
  f << j.dump() << "\n";
}

TemplateSet TemplateSet::full(int n_heads, int top_k) {
  TemplateSet set;
  set.top_k = top_k;
  std::vector<PathTemplate> frontier{{}};
  for (int depth = 1; depth <= n_heads; ++depth) {
    std::vector<PathTemplate> next;
    for (const auto& base : frontier)
      for (int r = 0; r < top_k; ++r) {
        PathTemplate t = base;
        t.push_back(r);
        set.templates.push_back(t);
        next.push_back(std::move(t));
      }
    frontier = std::move(next);
  }
  std::sort(set.templates.begin(), set.templates.end());
  return set;
}

std::vector<std::vector<double>> uniform_calibration(int n_heads, int top_k) {
  return std::vector<std::vector<double>>(
      std::size_t(n_heads),
      std::vector<double>(std::size_t(top_k), 1.0 / double(top_k)));
}

TemplateSet select_templates(int budget, int n_heads, int top_k,
                             const std::vector<std::vector<double>>& calib) {
  if (budget < 1) throw ConfigError("template budget must be at least 1");
  if (int(calib.size()) < n_heads)
    throw ConfigError("calibration table must cover every head");
  for (const auto& row : calib)
    if (int(row.size()) < top_k)
      throw ConfigError("calibration table must cover every rank");

  // Full space size, saturating to avoid overflow for large k^H.
  double full_space = 0.0;
  double pw = 1.0;
  for (int j = 0; j < n_heads; ++j) {
    pw *= double(top_k);
    full_space += pw;
  }
  if (double(budget) > full_space) {
    std::cerr << "[gen-templates] budget " << budget
              << " exceeds the full path space (" << std::int64_t(full_space)
              << "); clamping\n";
    budget = int(full_space);
  }

  struct Cand {
    double logp;
    PathTemplate path;
    bool operator<(const Cand& o) const {
      if (logp != o.logp) return logp < o.logp;  // max-heap on probability
      return path > o.path;                      // then lexicographic
    }
  };
  std::priority_queue<Cand> frontier;
  auto rank_logp = [&](int depth, int rank) {
    const double f = std::max(calib[std::size_t(depth - 1)][std::size_t(rank)],
                              1e-12);
    return std::log(f);
  };
  for (int r = 0; r < top_k; ++r)
    frontier.push({rank_logp(1, r), PathTemplate{r}});

  TemplateSet set;
  set.top_k = top_k;
  while (int(set.templates.size()) < budget && !frontier.empty()) {
    Cand c = frontier.top();
    frontier.pop();
    if (int(c.path.size()) < n_heads) {
      for (int r = 0; r < top_k; ++r) {
        PathTemplate child = c.path;
        child.push_back(r);
        frontier.push(
            {c.logp + rank_logp(int(child.size()), r), std::move(child)});
      }
    }
    set.templates.push_back(std::move(c.path));
  }
  std::sort(set.templates.begin(), set.templates.end());
  set.validate();
  return set;
}

// ---------------------------------------------------------------------------
// Candidate tree
// ---------------------------------------------------------------------------

CandidateTree build_tree(const TemplateSet& templates,
                         const std::vector<std::vector<int>>& per_head_topk) {
  templates.validate();
  const int depth_needed = templates.max_depth();
  if (int(per_head_topk.size()) < depth_needed)
    throw ConfigError("not enough head candidate lists for template depth");

  std::vector<PathTemplate> sorted = templates.templates;
  std::sort(sorted.begin(), sorted.end());

  CandidateTree tree;
  std::map<PathTemplate, int> index;
  for (const auto& t : sorted) {
    TreeNode node;
    node.depth = int(t.size());
    node.rank = t.back();
    node.source_head = node.depth - 1;
    const auto& choices = per_head_topk[std::size_t(node.source_head)];
    if (node.rank >= int(choices.size()))
      throw ConfigError("template rank exceeds available top-k candidates");
    node.token = choices[std::size_t(node.rank)];
    PathTemplate prefix(t.begin(), t.end() - 1);
    node.parent = prefix.empty() ? -1 : index.at(prefix);
    const int id = int(tree.nodes.size());
    index[t] = id;
    if (node.parent >= 0)
      tree.nodes[std::size_t(node.parent)].children.push_back(id);
    else
      tree.roots.push_back(id);
    tree.nodes.push_back(std::move(node));
  }
  return tree;
}

std::vector<int> CandidateTree::tokens() const {
  std::vector<int> out(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) out[i] = nodes[i].token;
  return out;
}

std::vector<int> CandidateTree::root_path(int node) const {
  std::vector<int> path;
  for (int cur = node; cur >= 0; cur = nodes[std::size_t(cur)].parent)
    path.push_back(cur);
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<std::uint8_t> CandidateTree::ancestor_mask() const {
  const int n = size();
  std::vector<std::uint8_t> m(std::size_t(n) * n, 0);
  for (int i = 0; i < n; ++i)
    for (int a : root_path(i)) m[std::size_t(i) * n + a] = 1;
  return m;
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

VerifyResult verify(const CandidateTree& tree, const BackboneModel& model,
                    KvCache& cache, int root_token) {
  const int L = cache.len;
  const int n = tree.size();
  const int T = 1 + n;

  // Row 0 carries the root (last committed token, not yet in the cache);
  // rows 1..n carry the tree in topological order.
  std::vector<int> tokens(static_cast<std::size_t>(T));
  std::vector<int> positions(static_cast<std::size_t>(T));
  tokens[0] = root_token;
  positions[0] = L;
  for (int i = 0; i < n; ++i) {
    tokens[std::size_t(1 + i)] = tree.nodes[std::size_t(i)].token;
    // Siblings share a position: committed prefix + depth.
    positions[std::size_t(1 + i)] = L + tree.nodes[std::size_t(i)].depth;
  }

  AttentionMask mask;
  mask.rows = T;
  mask.cols = L + T;
  mask.allow.assign(std::size_t(T) * (L + T), 0);
  for (int c = 0; c <= L; ++c) mask.at(0, c) = 1;  // root: cache + self
  for (int i = 0; i < n; ++i) {
    const int r = 1 + i;
    for (int c = 0; c < L; ++c) mask.at(r, c) = 1;  // committed prefix
    mask.at(r, L) = 1;                              // the root row
    for (int a : tree.root_path(i)) mask.at(r, L + 1 + a) = 1;  // ancestors+self
  }

  ForwardOutput fwd = forward(model, cache, tokens, positions, mask);

  VerifyResult res;
  res.tree_size = n;

  // Greedy walk: at most one child can match the argmax since siblings are
  // distinct candidates from one head's top-k.
  int anchor_row = 0;  // root row realizes the committed-context logits
  const std::vector<int>* level = &tree.roots;
  while (true) {
    const int next = kern::argmax(fwd.logit_row(anchor_row), fwd.V);
    int taken = -1;
    for (int id : *level)
      if (tree.nodes[std::size_t(id)].token == next) {
        taken = id;
        break;
      }
    if (taken < 0) break;
    res.accepted.push_back(next);
    res.accepted_node_ids.push_back(taken);
    anchor_row = 1 + taken;
    level = &tree.nodes[std::size_t(taken)].children;
    if (level->empty()) break;
  }
  res.bonus_token = kern::argmax(fwd.logit_row(anchor_row), fwd.V);
  res.h_last.assign(fwd.h_row(anchor_row), fwd.h_row(anchor_row) + fwd.d);
  res.logits.assign(fwd.logit_row(anchor_row),
                    fwd.logit_row(anchor_row) + fwd.V);

  // Keep root + accepted rows, drop rejected branches. The kept rows were
  // computed under exactly their ancestor context, so the compacted cache
  // is bit-identical to a sequential prefill of the surviving tokens.
  std::vector<int> kept{0};
  for (int id : res.accepted_node_ids) kept.push_back(1 + id);
  keep_rows(cache, L, kept);
  return res;
}

}  // namespace cerberus
