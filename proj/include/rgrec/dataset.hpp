#pragma once

#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rgrec/common.hpp"
#include "rgrec/graph.hpp"

namespace rgrec {

struct Interaction {
  std::string user;
  std::string item;
  std::uint8_t label;  // 1 = observed interaction
};

// Parsed interaction records in file order (duplicates removed).
struct InteractionSet {
  std::vector<Interaction> records;

  std::size_t size() const { return records.size(); }
  std::size_t positive_count() const;
  std::size_t negative_count() const { return records.size() - positive_count(); }
  std::vector<std::string> distinct_users() const;  // first-seen order
  std::vector<std::string> distinct_items() const;  // first-seen order
  InteractionSet positives() const;
};

// Loads `user<TAB>item[<TAB>label]` records; missing labels default to 1.
InteractionSet load_interactions(const std::string& path);

struct DatasetSplit {
  InteractionSet train;
  InteractionSet valid;
  InteractionSet test;
  std::uint64_t seed = 0;
  // permutation indices into the source set, for the persisted manifest
  std::vector<std::size_t> train_idx, valid_idx, test_idx;
};

// Random 6:2:2 split: train = floor(0.6 N), valid = floor(0.2 N), test = rest.
DatasetSplit split(const InteractionSet& data, std::uint64_t seed);

// Re-assembles a split from persisted index files.
DatasetSplit split_from_indices(const InteractionSet& data,
                                std::vector<std::size_t> train_idx,
                                std::vector<std::size_t> valid_idx,
                                std::vector<std::size_t> test_idx,
                                std::uint64_t seed);

// Item universe and per-user interacted sets over the *whole* dataset;
// negative sampling must never emit an item the user interacted with in
// any split.
class InteractionUniverse {
 public:
  explicit InteractionUniverse(const InteractionSet& all_data);

  const std::vector<std::string>& items() const { return items_; }
  bool interacted(const std::string& user, std::size_t item_index) const;
  std::size_t item_index(const std::string& item) const;

 private:
  std::vector<std::string> items_;  // first-seen order
  std::unordered_map<std::string, std::size_t> item_index_;
  std::unordered_map<std::string, std::unordered_set<std::size_t>> user_items_;
};

// For each positive (u, m) produces one (u, m', 0) with m' drawn uniformly
// from the items u never interacted with; output interleaves each positive
// with its negative. Users with no free item are skipped with a warning.
InteractionSet sample_ctr_negatives(const InteractionSet& positives,
                                    const InteractionUniverse& universe,
                                    std::uint64_t seed);

// n distinct never-interacted items for u, plus the positive item itself;
// when fewer than n candidates exist, all of them are used and the
// shortfall is reported through `shortfall`.
std::vector<std::string> sample_topk_candidates(const std::string& user,
                                                const std::string& positive_item,
                                                const InteractionUniverse& universe,
                                                std::size_t n, std::uint64_t seed,
                                                std::size_t* shortfall = nullptr);

// (user entity, item entity, label) rows resolved against a graph.
struct LabeledPair {
  EntityId user;
  EntityId item;
  std::uint8_t label;
};

// Resolves tokens to graph entities. Users absent from the graph (no train
// positive) are interned nowhere; such records are dropped when
// `drop_unknown_users` is set, otherwise it is an error.
std::vector<LabeledPair> resolve_pairs(const AugmentedGraph& g, const InteractionSet& set,
                                       bool drop_unknown_users = false);

}  // namespace rgrec
