#include "rgrec/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

namespace rgrec {

std::size_t InteractionSet::positive_count() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.label;
  return n;
}

std::vector<std::string> InteractionSet::distinct_users() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& r : records)
    if (seen.insert(r.user).second) out.push_back(r.user);
  return out;
}

std::vector<std::string> InteractionSet::distinct_items() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& r : records)
    if (seen.insert(r.item).second) out.push_back(r.item);
  return out;
}

InteractionSet InteractionSet::positives() const {
  InteractionSet out;
  for (const auto& r : records)
    if (r.label == 1) out.records.push_back(r);
  return out;
}

InteractionSet load_interactions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ratings file: " + path);
  InteractionSet out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split(line, '\t');
    if (fields.size() == 1) {
      std::istringstream is{line};
      fields.clear();
      std::string tok;
      while (is >> tok) fields.push_back(tok);
    }
    for (auto& f : fields) f = std::string(trim(f));
    if (fields.size() != 2 && fields.size() != 3)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected user<TAB>item[<TAB>label]");
    std::uint8_t label = 1;
    if (fields.size() == 3) {
      if (fields[2] == "0")
        label = 0;
      else if (fields[2] == "1")
        label = 1;
      else
        throw DataError(path + ":" + std::to_string(lineno) + ": label must be 0 or 1, got '" + fields[2] + "'");
    }
    std::string key = fields[0] + "\x1f" + fields[1] + "\x1f" + char('0' + label);
    if (!seen.insert(key).second) continue;  // duplicate record
    out.records.push_back({fields[0], fields[1], label});
  }
  return out;
}

DatasetSplit split(const InteractionSet& data, std::uint64_t seed) {
  const std::size_t n = data.size();
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(hash_combine(seed, 0x73706c6974ULL));  // "split"
  rng.shuffle(perm);

  const std::size_t n_train = n * 6 / 10;
  const std::size_t n_valid = n * 2 / 10;
  std::vector<std::size_t> ti(perm.begin(), perm.begin() + n_train);
  std::vector<std::size_t> vi(perm.begin() + n_train, perm.begin() + n_train + n_valid);
  std::vector<std::size_t> si(perm.begin() + n_train + n_valid, perm.end());
  return split_from_indices(data, std::move(ti), std::move(vi), std::move(si), seed);
}

DatasetSplit split_from_indices(const InteractionSet& data,
                                std::vector<std::size_t> train_idx,
                                std::vector<std::size_t> valid_idx,
                                std::vector<std::size_t> test_idx,
                                std::uint64_t seed) {
  DatasetSplit out;
  out.seed = seed;
  auto take = [&](const std::vector<std::size_t>& idx) {
    InteractionSet s;
    s.records.reserve(idx.size());
    for (std::size_t i : idx) s.records.push_back(data.records.at(i));
    return s;
  };
  out.train = take(train_idx);
  out.valid = take(valid_idx);
  out.test = take(test_idx);
  out.train_idx = std::move(train_idx);
  out.valid_idx = std::move(valid_idx);
  out.test_idx = std::move(test_idx);
  return out;
}

InteractionUniverse::InteractionUniverse(const InteractionSet& all_data) {
  for (const auto& r : all_data.records) {
    auto [it, inserted] = item_index_.try_emplace(r.item, items_.size());
    if (inserted) items_.push_back(r.item);
    if (r.label == 1) user_items_[r.user].insert(it->second);
  }
}

bool InteractionUniverse::interacted(const std::string& user, std::size_t item_index) const {
  auto it = user_items_.find(user);
  if (it == user_items_.end()) return false;
  return it->second.count(item_index) != 0;
}

std::size_t InteractionUniverse::item_index(const std::string& item) const {
  auto it = item_index_.find(item);
  if (it == item_index_.end()) throw DataError("unknown item: " + item);
  return it->second;
}

InteractionSet sample_ctr_negatives(const InteractionSet& positives,
                                    const InteractionUniverse& universe,
                                    std::uint64_t seed) {
  if (universe.items().empty()) throw DataError("empty item universe");
  InteractionSet out;
  Rng rng(hash_combine(seed, 0x6e656773ULL));  // "negs"
  const std::size_t n_items = universe.items().size();
  for (const auto& r : positives.records) {
    if (r.label != 1) continue;
    out.records.push_back(r);
    // rejection sampling; falls back to a linear scan when the user has
    // interacted with nearly everything
    std::size_t picked = n_items;
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::size_t j = static_cast<std::size_t>(rng.next_below(n_items));
      if (!universe.interacted(r.user, j)) {
        picked = j;
        break;
      }
    }
    if (picked == n_items) {
      std::vector<std::size_t> free;
      for (std::size_t j = 0; j < n_items; ++j)
        if (!universe.interacted(r.user, j)) free.push_back(j);
      if (free.empty()) {
        std::cerr << "warning: user " << r.user << " interacted with every item; skipping negative\n";
        continue;
      }
      picked = free[rng.next_below(free.size())];
    }
    out.records.push_back({r.user, universe.items()[picked], 0});
  }
  return out;
}

std::vector<std::string> sample_topk_candidates(const std::string& user,
                                                const std::string& positive_item,
                                                const InteractionUniverse& universe,
                                                std::size_t n, std::uint64_t seed,
                                                std::size_t* shortfall) {
  const auto& items = universe.items();
  std::vector<std::size_t> free;
  free.reserve(items.size());
  for (std::size_t j = 0; j < items.size(); ++j)
    if (!universe.interacted(user, j)) free.push_back(j);

  Rng rng(hash_combine(seed, 0x746f706bULL));  // "topk"
  rng.shuffle(free);
  std::size_t take = std::min(n, free.size());
  if (shortfall) *shortfall = n - take;

  std::vector<std::string> out;
  out.reserve(take + 1);
  out.push_back(positive_item);
  for (std::size_t j = 0; j < take; ++j) out.push_back(items[free[j]]);
  return out;
}

std::vector<LabeledPair> resolve_pairs(const AugmentedGraph& g, const InteractionSet& set,
                                       bool drop_unknown_users) {
  std::vector<LabeledPair> out;
  out.reserve(set.size());
  std::size_t dropped = 0;
  for (const auto& r : set.records) {
    auto u = g.find_user_entity(r.user);
    if (!u) {
      if (!drop_unknown_users) throw DataError("user absent from graph: " + r.user);
      ++dropped;
      continue;
    }
    out.push_back({*u, g.item_entity(r.item), r.label});
  }
  if (dropped > 0)
    std::cerr << "note: dropped " << dropped << " records whose user has no training interaction\n";
  return out;
}

}  // namespace rgrec
