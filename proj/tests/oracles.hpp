// Brute-force reference implementations used only by tests. Everything here
// is written independently of the library code paths it checks: exhaustive
// DFS instead of meet-in-the-middle or frontier BFS, O(P*N) pairwise metric
// counting instead of rank sums.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "rgrec/graph.hpp"
#include "rgrec/metrics.hpp"
#include "rgrec/rules.hpp"

namespace oracle {

using rgrec::EntityId;
using rgrec::KnowledgeGraph;
using rgrec::PredicateId;
using rgrec::Rule;

struct Edge {
  EntityId s;
  PredicateId p;
  EntityId o;
};

inline std::vector<Edge> all_edges(const KnowledgeGraph& g) {
  std::vector<Edge> out;
  for (std::size_t i = 0; i < g.triple_count(); ++i) {
    auto t = g.triple(i);
    out.push_back({t.s, t.p, t.o});
  }
  return out;
}

// All predicate sequences of u->m paths with length in [2, max_len], the
// direct (u, head, m) edge banned anywhere in the path (both orientations)
// and immediate backtracking over the same edge disallowed.
inline std::set<std::vector<PredicateId>> enumerate_rule_bodies(
    const KnowledgeGraph& g, PredicateId head, EntityId u, EntityId m, int max_len) {
  std::set<std::vector<PredicateId>> found;
  std::vector<PredicateId> seq;

  auto banned = [&](EntityId s, PredicateId p, EntityId o) {
    return (s == u && p == head && o == m) || (s == m && p == g.inverse(head) && o == u);
  };

  struct Frame {
    EntityId at;
    EntityId prev;
    PredicateId prev_p;
    bool has_prev;
  };

  // plain recursive DFS over every path
  auto dfs = [&](auto&& self, Frame f, int depth) -> void {
    if (f.at == m && depth >= 2) found.insert(seq);
    if (depth == max_len) return;
    auto preds = g.out_predicates(f.at);
    auto objs = g.out_objects(f.at);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (banned(f.at, preds[i], objs[i])) continue;
      if (f.has_prev && objs[i] == f.prev && preds[i] == g.inverse(f.prev_p)) continue;
      seq.push_back(preds[i]);
      self(self, Frame{objs[i], f.at, preds[i], true}, depth + 1);
      seq.pop_back();
    }
  };
  dfs(dfs, Frame{u, 0, 0, false}, 0);
  return found;
}

inline std::set<std::vector<PredicateId>> enumerate_rule_bodies_all_pairs(
    const KnowledgeGraph& g, PredicateId head,
    const std::vector<std::pair<EntityId, EntityId>>& pairs, int max_len) {
  std::set<std::vector<PredicateId>> all;
  for (auto [u, m] : pairs) {
    auto part = enumerate_rule_bodies(g, head, u, m, max_len);
    all.insert(part.begin(), part.end());
  }
  return all;
}

// Path-enumeration grounding check with the direct edge excluded from the
// body's first step only.
inline bool match_oracle(const KnowledgeGraph& g, PredicateId head, EntityId u, EntityId m,
                         const Rule& r) {
  auto dfs = [&](auto&& self, EntityId at, std::size_t k) -> bool {
    if (k == r.body.size()) return at == m;
    for (EntityId o : g.neighbors(at, r.body[k])) {
      if (k == 0 && r.body[0] == head && o == m) continue;
      if (self(self, o, k + 1)) return true;
    }
    return false;
  };
  return dfs(dfs, u, 0);
}

struct CwaCounts {
  std::uint64_t support = 0;
  std::uint64_t body = 0;
};

inline CwaCounts cwa_oracle(const KnowledgeGraph& g, PredicateId head, const Rule& r) {
  CwaCounts c;
  for (EntityId u = 0; u < g.entity_count(); ++u) {
    if (g.neighbors(u, r.body[0]).empty()) continue;
    for (EntityId m = 0; m < g.entity_count(); ++m) {
      if (!match_oracle(g, head, u, m, r)) continue;
      ++c.body;
      if (g.has_edge(u, head, m)) ++c.support;
    }
  }
  return c;
}

// O(P*N) pairwise AUC.
inline double auc_oracle(const std::vector<rgrec::Scored>& s) {
  double num = 0.0;
  std::size_t pairs = 0;
  for (const auto& a : s) {
    if (!a.label) continue;
    for (const auto& b : s) {
      if (b.label) continue;
      ++pairs;
      if (a.score > b.score)
        num += 1.0;
      else if (a.score == b.score)
        num += 0.5;
    }
  }
  return num / static_cast<double>(pairs);
}

inline double f1_oracle(const std::vector<rgrec::Scored>& s, double threshold) {
  double tp = 0, fp = 0, fn = 0;
  for (const auto& r : s) {
    if (r.score >= threshold && r.label) tp += 1;
    if (r.score >= threshold && !r.label) fp += 1;
    if (r.score < threshold && r.label) fn += 1;
  }
  if (tp == 0) return 0.0;
  double prec = tp / (tp + fp), rec = tp / (tp + fn);
  return 2 * prec * rec / (prec + rec);
}

// Plain full-batch gradient-descent logistic regression (log loss), used as
// an independent fit to sanity-check pre-trained rule weights.
inline std::vector<double> logistic_fit_oracle(const std::vector<std::vector<double>>& x,
                                               const std::vector<int>& y, int iters,
                                               double lr) {
  std::size_t n = x.size(), d = x[0].size();
  std::vector<double> w(d, 0.0);
  for (int it = 0; it < iters; ++it) {
    std::vector<double> grad(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * x[i][j];
      double p = 1.0 / (1.0 + std::exp(-z));
      for (std::size_t j = 0; j < d; ++j) grad[j] += (p - y[i]) * x[i][j] / n;
    }
    for (std::size_t j = 0; j < d; ++j) w[j] -= lr * grad[j];
  }
  return w;
}

// Random inverse-closed graph over n entities and a handful of predicates;
// predicate 0 plays the interacts role.
inline KnowledgeGraph random_graph(std::uint64_t seed, int n_entities, int n_preds,
                                   int n_edges) {
  rgrec::Rng rng(seed);
  rgrec::GraphBuilder b;
  for (int i = 0; i < n_entities; ++i) b.add_entity("e" + std::to_string(i));
  std::vector<PredicateId> preds;
  for (int i = 0; i < n_preds; ++i) preds.push_back(b.add_predicate("p" + std::to_string(i)));
  for (int i = 0; i < n_edges; ++i) {
    EntityId s = static_cast<EntityId>(rng.next_below(n_entities));
    EntityId o = static_cast<EntityId>(rng.next_below(n_entities));
    PredicateId p = preds[rng.next_below(preds.size())];
    if (s == o) continue;
    b.add_triple_ids(s, p, o);
  }
  return std::move(b).build();
}

inline std::vector<std::pair<EntityId, EntityId>> head_pairs(const KnowledgeGraph& g,
                                                             PredicateId head) {
  std::vector<std::pair<EntityId, EntityId>> pairs;
  for (EntityId e = 0; e < g.entity_count(); ++e)
    for (EntityId o : g.neighbors(e, head)) pairs.emplace_back(e, o);
  return pairs;
}

}  // namespace oracle
