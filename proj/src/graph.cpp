#include "rgrec/graph.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace rgrec {

std::uint32_t Interner::intern(std::string_view label) {
  auto it = index_.find(std::string(label));
  if (it != index_.end()) return it->second;
  std::uint32_t id = static_cast<std::uint32_t>(labels_.size());
  labels_.emplace_back(label);
  index_.emplace(labels_.back(), id);
  return id;
}

std::optional<std::uint32_t> Interner::find(std::string_view label) const {
  auto it = index_.find(std::string(label));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

KnowledgeGraph::KnowledgeGraph(Interner entities, Interner predicates,
                               std::vector<PredicateId> inverse_of,
                               std::vector<Triple> directed)
    : entities_(std::move(entities)),
      predicates_(std::move(predicates)),
      inverse_of_(std::move(inverse_of)) {
  is_inverse_.resize(inverse_of_.size());
  for (std::uint32_t p = 0; p < inverse_of_.size(); ++p)
    is_inverse_[p] = inverse_of_[p] < p ? 1 : 0;

  std::sort(directed.begin(), directed.end());
  directed.erase(std::unique(directed.begin(), directed.end()), directed.end());

  const std::size_t n = directed.size();
  subj_.resize(n);
  pred_.resize(n);
  obj_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    subj_[i] = directed[i].s;
    pred_[i] = directed[i].p;
    obj_[i] = directed[i].o;
  }
  offset_.assign(entity_count() + 1, 0);
  for (std::size_t i = 0; i < n; ++i) offset_[subj_[i] + 1]++;
  for (std::size_t e = 0; e < entity_count(); ++e) offset_[e + 1] += offset_[e];
}

std::span<const EntityId> KnowledgeGraph::neighbors(EntityId e, PredicateId p) const {
  if (e >= entity_count()) return {};
  auto first = pred_.begin() + static_cast<std::ptrdiff_t>(offset_[e]);
  auto last = pred_.begin() + static_cast<std::ptrdiff_t>(offset_[e + 1]);
  auto lo = std::lower_bound(first, last, p);
  auto hi = std::upper_bound(lo, last, p);
  std::size_t b = static_cast<std::size_t>(lo - pred_.begin());
  std::size_t n = static_cast<std::size_t>(hi - lo);
  return std::span<const EntityId>(obj_.data() + b, n);
}

bool KnowledgeGraph::has_edge(EntityId s, PredicateId p, EntityId o) const {
  auto ns = neighbors(s, p);
  return std::binary_search(ns.begin(), ns.end(), o);
}

std::span<const PredicateId> KnowledgeGraph::out_predicates(EntityId e) const {
  if (e >= entity_count()) return {};
  return std::span<const PredicateId>(pred_.data() + offset_[e], offset_[e + 1] - offset_[e]);
}

std::span<const EntityId> KnowledgeGraph::out_objects(EntityId e) const {
  if (e >= entity_count()) return {};
  return std::span<const EntityId>(obj_.data() + offset_[e], offset_[e + 1] - offset_[e]);
}

std::uint64_t KnowledgeGraph::content_hash() const {
  Fnv64 h;
  h.update_u64(entity_count());
  h.update_u64(predicate_count());
  for (std::uint32_t i = 0; i < entity_count(); ++i) h.update(entities_.label(i));
  for (std::uint32_t i = 0; i < predicate_count(); ++i) h.update(predicates_.label(i));
  for (std::size_t i = 0; i < triple_count(); ++i) {
    h.update_u64(subj_[i]);
    h.update_u64(pred_[i]);
    h.update_u64(obj_[i]);
  }
  return h.digest();
}

GraphBuilder::GraphBuilder(const KnowledgeGraph& base)
    : entities_(base.entities_), predicates_(base.predicates_), inverse_of_(base.inverse_of_) {
  directed_.reserve(base.triple_count());
  for (std::size_t i = 0; i < base.triple_count(); ++i) directed_.push_back(base.triple(i));
}

EntityId GraphBuilder::add_entity(std::string_view label) { return entities_.intern(label); }

PredicateId GraphBuilder::add_predicate(std::string_view label) {
  if (auto existing = predicates_.find(label)) return *existing;
  PredicateId base = predicates_.intern(label);
  PredicateId inv = predicates_.intern(std::string(label) + "__inv");
  inverse_of_.resize(predicates_.size());
  inverse_of_[base] = inv;
  inverse_of_[inv] = base;
  return base;
}

void GraphBuilder::add_triple(std::string_view s, std::string_view p, std::string_view o) {
  add_triple_ids(add_entity(s), add_predicate(p), add_entity(o));
}

void GraphBuilder::add_triple_ids(EntityId s, PredicateId p, EntityId o) {
  directed_.push_back({s, p, o});
  directed_.push_back({o, inverse_of_.at(p), s});
}

KnowledgeGraph GraphBuilder::build() && {
  return KnowledgeGraph(std::move(entities_), std::move(predicates_),
                        std::move(inverse_of_), std::move(directed_));
}

KnowledgeGraph build_graph(const std::vector<LabeledTriple>& triples) {
  GraphBuilder b;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto& t = triples[i];
    if (t[0].empty() || t[1].empty() || t[2].empty())
      throw DataError("triple " + std::to_string(i) + ": empty label");
    b.add_triple(t[0], t[1], t[2]);
  }
  return std::move(b).build();
}

namespace {

std::vector<std::string> parse_fields(std::string_view line) {
  auto fields = split(line, '\t');
  if (fields.size() == 1) {
    // fall back to whitespace-separated tokens
    std::istringstream in{std::string(line)};
    fields.clear();
    std::string tok;
    while (in >> tok) fields.push_back(tok);
  }
  for (auto& f : fields) f = std::string(trim(f));
  return fields;
}

}  // namespace

KnowledgeGraph load_kg_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open KG file: " + path);
  GraphBuilder b;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = parse_fields(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty())
      throw DataError(path + ":" + std::to_string(lineno) + ": expected head<TAB>relation<TAB>tail");
    b.add_triple(fields[0], fields[1], fields[2]);
  }
  return std::move(b).build();
}

EntityId AugmentedGraph::item_entity(const std::string& item) const {
  auto it = item_entity_.find(item);
  if (it == item_entity_.end()) throw DataError("unmapped item: " + item);
  return it->second;
}

std::optional<EntityId> AugmentedGraph::find_item_entity(const std::string& item) const {
  auto it = item_entity_.find(item);
  if (it == item_entity_.end()) return std::nullopt;
  return it->second;
}

std::optional<EntityId> AugmentedGraph::find_user_entity(const std::string& user) const {
  return graph_.entities().find(std::string(kUserPrefix) + user);
}

AugmentedGraph merge_interactions(
    const KnowledgeGraph& kg,
    const std::vector<std::pair<std::string, std::string>>& interactions,
    const std::unordered_map<std::string, std::string>& item_map) {
  GraphBuilder b(kg);
  const std::uint32_t base_entities = kg.entity_count();

  AugmentedGraph out;

  // Intern every mapped item entity first (sorted token order keeps id
  // assignment independent of hash-map iteration order).
  std::vector<std::string> item_tokens;
  item_tokens.reserve(item_map.size());
  for (const auto& [token, _] : item_map) item_tokens.push_back(token);
  std::sort(item_tokens.begin(), item_tokens.end());
  for (const auto& token : item_tokens)
    out.item_entity_[token] = b.add_entity(item_map.at(token));

  PredicateId interacts = b.add_predicate(AugmentedGraph::kInteractsLabel);

  const EntityId user_begin = b.entities().size();
  std::vector<std::pair<EntityId, EntityId>> pairs;
  pairs.reserve(interactions.size());
  for (const auto& [user, item] : interactions) {
    auto mit = out.item_entity_.find(item);
    if (mit == out.item_entity_.end()) throw DataError("unmapped item: " + item);
    std::string user_label = std::string(AugmentedGraph::kUserPrefix) + user;
    if (auto existing = b.entities().find(user_label); existing && *existing < base_entities)
      throw DataError("user label collides with an existing entity: " + user_label);
    EntityId u = b.add_entity(user_label);
    pairs.emplace_back(u, mit->second);
  }
  const EntityId user_end = b.entities().size();

  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  for (const auto& [u, e] : pairs) b.add_triple_ids(u, interacts, e);

  out.graph_ = std::move(b).build();
  out.interacts_ = interacts;
  out.user_begin_ = user_begin;
  out.user_end_ = user_end;
  out.interactions_ = std::move(pairs);
  return out;
}

}  // namespace rgrec
