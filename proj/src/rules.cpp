#include "rgrec/rules.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rgrec {

bool canonical_rule_less(const Rule& a, const Rule& b) {
  if (a.body.size() != b.body.size()) return a.body.size() < b.body.size();
  return a.body < b.body;
}

const char* strategy_name(RuleStrategy s) {
  switch (s) {
    case RuleStrategy::mined: return "mined";
    case RuleStrategy::cwa: return "cwa";
    case RuleStrategy::rotate: return "rotate";
    case RuleStrategy::transe: return "transe";
  }
  return "?";
}

RuleStrategy strategy_from_name(const std::string& name) {
  if (name == "mined") return RuleStrategy::mined;
  if (name == "cwa") return RuleStrategy::cwa;
  if (name == "rotate") return RuleStrategy::rotate;
  if (name == "transe") return RuleStrategy::transe;
  throw ConfigError("unknown rule strategy: " + name + " (expected cwa, rotate or transe)");
}

namespace {

struct BodyHash {
  std::size_t operator()(const std::vector<PredicateId>& v) const {
    Fnv64 h;
    h.update(v.data(), v.size() * sizeof(PredicateId));
    return static_cast<std::size_t>(h.digest());
  }
};

using BodySet = std::unordered_set<std::vector<PredicateId>, BodyHash>;

// A half path kept for the meet-in-the-middle join. For forward halves
// `end` is the last entity reached and (adj, adj_p) the last edge taken;
// for backward halves `end` is the junction entity the suffix starts at
// and (adj, adj_p) its first forward-orientation edge.
struct HalfPath {
  std::vector<PredicateId> seq;  // forward-orientation predicates
  EntityId adj = kNoEntity;
  PredicateId adj_p = 0;
};

struct PairSearch {
  const KnowledgeGraph& g;
  EntityId u, m;
  PredicateId head;

  bool banned(EntityId s, PredicateId p, EntityId o) const {
    PredicateId head_inv = g.inverse(head);
    return (s == u && p == head && o == m) || (s == m && p == head_inv && o == u);
  }
};

void forward_paths(const PairSearch& ps, EntityId cur, int depth, int budget,
                   std::vector<PredicateId>& seq, EntityId prev, PredicateId prev_p,
                   std::unordered_map<EntityId, std::vector<HalfPath>>& out) {
  out[cur].push_back({seq, prev, prev_p});
  if (depth == budget) return;
  auto preds = ps.g.out_predicates(cur);
  auto objs = ps.g.out_objects(cur);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    PredicateId p = preds[i];
    EntityId o = objs[i];
    if (ps.banned(cur, p, o)) continue;
    if (depth > 0 && o == prev && p == ps.g.inverse(prev_p)) continue;  // immediate backtrack
    seq.push_back(p);
    forward_paths(ps, o, depth + 1, budget, seq, cur, p, out);
    seq.pop_back();
  }
}

// Backward halves are found by walking adjacency from m; a traversal step
// (cur, r, o) corresponds to the forward-orientation edge (o, inv(r), cur).
void backward_paths(const PairSearch& ps, EntityId cur, int depth, int budget,
                    std::vector<PredicateId>& walk, EntityId prev, PredicateId prev_p,
                    std::vector<std::pair<EntityId, HalfPath>>& out) {
  HalfPath hp;
  hp.seq.reserve(walk.size());
  for (std::size_t i = walk.size(); i > 0; --i) hp.seq.push_back(ps.g.inverse(walk[i - 1]));
  if (depth > 0) {
    hp.adj = prev;
    hp.adj_p = ps.g.inverse(prev_p);
  }
  out.emplace_back(cur, std::move(hp));
  if (depth == budget) return;
  auto preds = ps.g.out_predicates(cur);
  auto objs = ps.g.out_objects(cur);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    PredicateId r = preds[i];
    EntityId o = objs[i];
    if (ps.banned(o, ps.g.inverse(r), cur)) continue;
    if (depth > 0 && o == prev && r == ps.g.inverse(prev_p)) continue;
    walk.push_back(r);
    backward_paths(ps, o, depth + 1, budget, walk, cur, r, out);
    walk.pop_back();
  }
}

void mine_pair(const KnowledgeGraph& g, PredicateId head, EntityId u, EntityId m,
               int max_len, BodySet& sink) {
  PairSearch ps{g, u, m, head};
  const int fwd_budget = (max_len + 1) / 2;
  const int bwd_budget = max_len / 2;

  std::unordered_map<EntityId, std::vector<HalfPath>> fwd;
  std::vector<PredicateId> scratch;
  forward_paths(ps, u, 0, fwd_budget, scratch, kNoEntity, 0, fwd);

  std::vector<std::pair<EntityId, HalfPath>> bwd;
  scratch.clear();
  backward_paths(ps, m, 0, bwd_budget, scratch, kNoEntity, 0, bwd);

  std::vector<PredicateId> body;
  for (const auto& [start, b] : bwd) {
    auto it = fwd.find(start);
    if (it == fwd.end()) continue;
    for (const auto& f : it->second) {
      std::size_t len = f.seq.size() + b.seq.size();
      if (len < 2 || len > static_cast<std::size_t>(max_len)) continue;
      if (!f.seq.empty() && !b.seq.empty() && b.adj == f.adj &&
          b.adj_p == g.inverse(f.seq.back()))
        continue;  // the join itself would backtrack over the last forward edge
      body.assign(f.seq.begin(), f.seq.end());
      body.insert(body.end(), b.seq.begin(), b.seq.end());
      sink.insert(body);
    }
  }
}

}  // namespace

std::vector<Rule> mine_rules_for_pairs(const KnowledgeGraph& g, PredicateId head,
                                       std::span<const std::pair<EntityId, EntityId>> pairs,
                                       const MineConfig& cfg) {
  if (cfg.max_len < 2) throw ConfigError("rule mining requires max_len >= 2");

  std::vector<std::pair<EntityId, EntityId>> selected(pairs.begin(), pairs.end());
  if (cfg.pair_cap > 0 && cfg.pair_cap < selected.size()) {
    Rng rng(hash_combine(cfg.seed, 0x6d696e65ULL));  // "mine"
    rng.shuffle(selected);
    selected.resize(cfg.pair_cap);
    std::sort(selected.begin(), selected.end());
  }

  BodySet bodies;
#ifdef _OPENMP
  if (cfg.threads > 1) {
    std::vector<BodySet> partial(static_cast<std::size_t>(cfg.threads));
#pragma omp parallel for schedule(dynamic) num_threads(cfg.threads)
    for (std::size_t i = 0; i < selected.size(); ++i)
      mine_pair(g, head, selected[i].first, selected[i].second, cfg.max_len,
                partial[static_cast<std::size_t>(omp_get_thread_num())]);
    for (auto& s : partial) bodies.merge(s);
  } else
#endif
  {
    for (const auto& [u, m] : selected) mine_pair(g, head, u, m, cfg.max_len, bodies);
  }

  std::vector<Rule> out;
  out.reserve(bodies.size());
  for (auto& b : bodies) out.push_back(Rule{b});
  std::sort(out.begin(), out.end(), canonical_rule_less);
  return out;
}

std::vector<Rule> mine_rules(const AugmentedGraph& g, const MineConfig& cfg) {
  return mine_rules_for_pairs(g.graph(), g.interacts(), g.interactions(), cfg);
}

namespace {

// Reusable frontier workspace; `mark` doubles as a visited stamp.
struct Frontier {
  std::vector<std::uint32_t> stamp;
  std::uint32_t gen = 0;

  void reset(std::size_t n) {
    if (stamp.size() < n) stamp.assign(n, 0);
    ++gen;
  }
  bool mark(EntityId e) {
    if (stamp[e] == gen) return false;
    stamp[e] = gen;
    return true;
  }
};

thread_local Frontier t_frontier_a, t_frontier_b;

}  // namespace

bool match_rule(const KnowledgeGraph& g, EntityId u, EntityId m, const Rule& r,
                PredicateId head) {
  if (r.body.empty()) return false;
  if (u >= g.entity_count() || m >= g.entity_count()) return false;

  std::vector<EntityId> frontier{u}, next;
  Frontier& seen = t_frontier_a;
  for (std::size_t k = 0; k < r.body.size(); ++k) {
    PredicateId p = r.body[k];
    seen.reset(g.entity_count());
    next.clear();
    for (EntityId e : frontier) {
      for (EntityId o : g.neighbors(e, p)) {
        if (k == 0 && p == head && o == m) continue;  // direct edge exclusion
        if (seen.mark(o)) next.push_back(o);
      }
    }
    frontier.swap(next);
    if (frontier.empty()) return false;
  }
  return std::find(frontier.begin(), frontier.end(), m) != frontier.end();
}

namespace {

// Entities reachable from x via the body tail (no exclusions), sorted.
std::vector<EntityId> reach_via(const KnowledgeGraph& g, EntityId x,
                                std::span<const PredicateId> tail) {
  std::vector<EntityId> frontier{x}, next;
  Frontier& seen = t_frontier_b;
  for (PredicateId p : tail) {
    seen.reset(g.entity_count());
    next.clear();
    for (EntityId e : frontier)
      for (EntityId o : g.neighbors(e, p))
        if (seen.mark(o)) next.push_back(o);
    frontier.swap(next);
    if (frontier.empty()) break;
  }
  std::sort(frontier.begin(), frontier.end());
  return frontier;
}

}  // namespace

std::optional<RuleScore> cwa_confidence(const KnowledgeGraph& g, PredicateId head,
                                        const Rule& r, const CwaOptions& opt) {
  if (r.body.size() < 2) throw ConfigError("cwa_confidence expects rule length >= 2");
  const PredicateId b0 = r.body[0];
  const std::span<const PredicateId> tail(r.body.data() + 1, r.body.size() - 1);

  std::unordered_map<EntityId, std::vector<EntityId>> reach_cache;
  auto reach = [&](EntityId x) -> const std::vector<EntityId>& {
    auto it = reach_cache.find(x);
    if (it != reach_cache.end()) return it->second;
    return reach_cache.emplace(x, reach_via(g, x, tail)).first->second;
  };

  std::vector<std::uint32_t> occ(g.entity_count(), 0);
  std::vector<EntityId> touched;

  std::uint64_t support = 0, body_count = 0, explored = 0;
  bool estimate = false;

  for (EntityId e = 0; e < g.entity_count(); ++e) {
    auto firsts = g.neighbors(e, b0);
    if (firsts.empty()) continue;
    if (explored >= opt.grounding_cap) {
      estimate = true;
      break;
    }
    touched.clear();
    for (EntityId m1 : firsts) {
      const auto& R = reach(m1);
      explored += R.size();
      for (EntityId t : R) {
        if (occ[t]++ == 0) touched.push_back(t);
      }
    }
    for (EntityId t : touched) {
      std::uint32_t eff = occ[t];
      // the direct (e, head, t) edge may not serve as the first step
      if (b0 == head && std::binary_search(firsts.begin(), firsts.end(), t)) {
        const auto& self_reach = reach(t);
        if (std::binary_search(self_reach.begin(), self_reach.end(), t)) eff -= 1;
      }
      if (eff >= 1) {
        ++body_count;
        if (g.has_edge(e, head, t)) ++support;
      }
      occ[t] = 0;
    }
  }

  if (body_count == 0) return std::nullopt;
  RuleScore score;
  score.value = static_cast<double>(support) / static_cast<double>(body_count);
  score.strategy = RuleStrategy::cwa;
  score.estimate = estimate;
  return score;
}

std::vector<ScoredRule> rank_rules(const std::vector<Rule>& rules,
                                   const std::vector<RuleScore>& scores, std::size_t top_l) {
  if (rules.size() != scores.size())
    throw ConfigError("rank_rules: every rule must carry a score");
  std::vector<std::size_t> idx(rules.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a].value != scores[b].value) return scores[a].value > scores[b].value;
    return canonical_rule_less(rules[a], rules[b]);
  });
  if (top_l > 0 && top_l < idx.size()) idx.resize(top_l);
  std::vector<ScoredRule> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back({rules[i], scores[i]});
  return out;
}

void save_rules(const std::string& path, const KnowledgeGraph& g,
                std::span<const ScoredRule> rules) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write rules file: " + path);
  for (const auto& sr : rules) {
    out << format_double(sr.score.value) << '\t' << strategy_name(sr.score.strategy);
    if (sr.score.estimate) out << "*";
    out << '\t';
    for (std::size_t i = 0; i < sr.rule.body.size(); ++i) {
      if (i) out << ',';
      out << g.predicates().label(sr.rule.body[i]);
    }
    out << '\n';
  }
}

std::vector<ScoredRule> load_rules(const std::string& path, const KnowledgeGraph& g) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open rules file: " + path);
  std::vector<ScoredRule> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 3)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected score<TAB>strategy<TAB>body");
    ScoredRule sr;
    char* endp = nullptr;
    sr.score.value = std::strtod(fields[0].c_str(), &endp);
    if (endp == fields[0].c_str())
      throw DataError(path + ":" + std::to_string(lineno) + ": bad score");
    std::string strat = fields[1];
    if (!strat.empty() && strat.back() == '*') {
      sr.score.estimate = true;
      strat.pop_back();
    }
    sr.score.strategy = strat == "mined" ? RuleStrategy::mined : strategy_from_name(strat);
    for (const auto& lbl : split(fields[2], ',')) {
      auto pid = g.predicates().find(lbl);
      if (!pid)
        throw DataError(path + ":" + std::to_string(lineno) + ": unknown predicate: " + lbl);
      sr.rule.body.push_back(*pid);
    }
    if (sr.rule.body.empty())
      throw DataError(path + ":" + std::to_string(lineno) + ": empty rule body");
    out.push_back(std::move(sr));
  }
  return out;
}

}  // namespace rgrec
