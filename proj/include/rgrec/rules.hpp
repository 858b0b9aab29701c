#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rgrec/common.hpp"
#include "rgrec/graph.hpp"

namespace rgrec {

// A chain rule body for the implicit head `interacts`. Body length is the
// rule length h; mined rules have 2 <= h <= max_len.
struct Rule {
  std::vector<PredicateId> body;

  std::size_t length() const { return body.size(); }
  friend auto operator<=>(const Rule&, const Rule&) = default;
};

// Canonical pre-ranking order: shorter bodies first, then lexicographic.
bool canonical_rule_less(const Rule& a, const Rule& b);

enum class RuleStrategy { mined, cwa, rotate, transe };

const char* strategy_name(RuleStrategy s);
RuleStrategy strategy_from_name(const std::string& name);

struct RuleScore {
  double value = 0.0;
  RuleStrategy strategy = RuleStrategy::mined;
  bool estimate = false;  // set when a grounding cap truncated CWA counting
};

struct ScoredRule {
  Rule rule;
  RuleScore score;
};

struct MineConfig {
  int max_len = 3;              // I
  std::uint64_t pair_cap = 0;   // 0 = all positive pairs
  std::uint64_t seed = 0;
  int threads = 1;
};

// Candidate rules for `head` over the given (u, m) pairs: all predicate
// sequences of u->m paths of length in [2, max_len], found by
// meet-in-the-middle BFS (forward depth ceil(I/2) from u, backward depth
// floor(I/2) from m over inverse edges). For each pair the direct
// (u, head, m) edge is removed from the search; immediate backtracking
// over the same edge is not allowed. Result is deduplicated and in
// canonical order.
std::vector<Rule> mine_rules_for_pairs(const KnowledgeGraph& g, PredicateId head,
                                       std::span<const std::pair<EntityId, EntityId>> pairs,
                                       const MineConfig& cfg);

// Mines over the graph's own positive interactions (sampled down to
// pair_cap pairs when the cap is set).
std::vector<Rule> mine_rules(const AugmentedGraph& g, const MineConfig& cfg);

// True iff a grounding u ->p1 e1 ... ->ph m exists. The direct (u, head, m)
// edge may not serve as the body's first step.
bool match_rule(const KnowledgeGraph& g, EntityId u, EntityId m, const Rule& r,
                PredicateId head);

struct CwaOptions {
  std::uint64_t grounding_cap = 100000;  // explored groundings per rule
};

// Closed-world (standard) confidence: among distinct (u, m) with a body
// grounding, the fraction that also have the head edge. Returns nullopt
// when the body has no grounding at all (rule is dropped).
std::optional<RuleScore> cwa_confidence(const KnowledgeGraph& g, PredicateId head,
                                        const Rule& r, const CwaOptions& opt = {});

// Top-L rules by score descending; ties broken by shorter body first, then
// lexicographic body. L = 0 keeps everything. The returned order is the
// canonical rule order used downstream (feature columns, weight indices).
std::vector<ScoredRule> rank_rules(const std::vector<Rule>& rules,
                                   const std::vector<RuleScore>& scores, std::size_t top_l);

// Rules file: one `score<TAB>strategy<TAB>p1,p2,...,ph` line per rule,
// using external predicate labels. Scores round-trip bit-exactly.
void save_rules(const std::string& path, const KnowledgeGraph& g,
                std::span<const ScoredRule> rules);
std::vector<ScoredRule> load_rules(const std::string& path, const KnowledgeGraph& g);

}  // namespace rgrec
