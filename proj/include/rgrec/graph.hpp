#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rgrec/common.hpp"

namespace rgrec {

using EntityId = std::uint32_t;
using PredicateId = std::uint32_t;

inline constexpr EntityId kNoEntity = 0xffffffffu;

struct Triple {
  EntityId s;
  PredicateId p;
  EntityId o;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

// Label -> dense id table. Ids are assigned in first-seen order.
class Interner {
 public:
  std::uint32_t intern(std::string_view label);
  std::optional<std::uint32_t> find(std::string_view label) const;
  const std::string& label(std::uint32_t id) const { return labels_.at(id); }
  std::uint32_t size() const { return static_cast<std::uint32_t>(labels_.size()); }

 private:
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<std::string> labels_;
};

using LabeledTriple = std::array<std::string, 3>;

// Immutable interned triple store. Every stored triple has its inverse
// stored as well; predicates come in (base, inverse) pairs interned
// back to back, the inverse carrying the external label suffix "__inv".
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  KnowledgeGraph(Interner entities, Interner predicates,
                 std::vector<PredicateId> inverse_of, std::vector<Triple> directed);

  std::uint32_t entity_count() const { return entities_.size(); }
  std::uint32_t predicate_count() const { return predicates_.size(); }
  std::size_t triple_count() const { return pred_.size(); }

  const Interner& entities() const { return entities_; }
  const Interner& predicates() const { return predicates_; }

  PredicateId inverse(PredicateId p) const { return inverse_of_.at(p); }
  bool is_inverse(PredicateId p) const { return is_inverse_.at(p) != 0; }

  // Objects o with (e, p, o) stored, sorted by id. Empty when none.
  std::span<const EntityId> neighbors(EntityId e, PredicateId p) const;

  bool has_edge(EntityId s, PredicateId p, EntityId o) const;

  // Directed edge list in canonical (s, p, o) order.
  Triple triple(std::size_t i) const { return {subj_[i], pred_[i], obj_[i]}; }
  std::span<const EntityId> edge_subjects() const { return subj_; }
  std::span<const PredicateId> edge_predicates() const { return pred_; }
  std::span<const EntityId> edge_objects() const { return obj_; }

  // All (p, o) pairs leaving e, sorted.
  std::span<const PredicateId> out_predicates(EntityId e) const;
  std::span<const EntityId> out_objects(EntityId e) const;

  std::uint64_t content_hash() const;

 private:
  friend class GraphBuilder;

  Interner entities_;
  Interner predicates_;
  std::vector<PredicateId> inverse_of_;
  std::vector<std::uint8_t> is_inverse_;

  // CSR over entities; edges sorted by (s, p, o), deduplicated.
  std::vector<std::size_t> offset_;  // entity_count()+1
  std::vector<EntityId> subj_;
  std::vector<PredicateId> pred_;
  std::vector<EntityId> obj_;
};

// Accumulates labeled triples, then produces the inverse-closed graph.
class GraphBuilder {
 public:
  GraphBuilder() = default;
  explicit GraphBuilder(const KnowledgeGraph& base);

  EntityId add_entity(std::string_view label);
  // Interns a base predicate and its "__inv" twin; returns the base id.
  PredicateId add_predicate(std::string_view label);
  void add_triple(std::string_view s, std::string_view p, std::string_view o);
  void add_triple_ids(EntityId s, PredicateId p, EntityId o);

  const Interner& entities() const { return entities_; }
  const Interner& predicates() const { return predicates_; }

  KnowledgeGraph build() &&;

 private:
  Interner entities_;
  Interner predicates_;
  std::vector<PredicateId> inverse_of_;
  std::vector<Triple> directed_;
};

// Builds the inverse-closed graph from string-labeled triples.
// Duplicate input triples are deduplicated.
KnowledgeGraph build_graph(const std::vector<LabeledTriple>& triples);

// Parses a KG file: one `head<TAB>relation<TAB>tail` per line.
KnowledgeGraph load_kg_file(const std::string& path);

// G_H: the KG plus user entities and `interacts` edges for the positive
// training interactions. Users are new entities; each participates only
// in interacts / interacts__inv edges.
class AugmentedGraph {
 public:
  static constexpr const char* kInteractsLabel = "interacts";
  static constexpr const char* kUserPrefix = "user::";

  const KnowledgeGraph& graph() const { return graph_; }
  PredicateId interacts() const { return interacts_; }
  PredicateId interacts_inv() const { return graph_.inverse(interacts_); }

  EntityId user_begin() const { return user_begin_; }
  EntityId user_end() const { return user_end_; }
  std::uint32_t user_count() const { return user_end_ - user_begin_; }
  bool is_user(EntityId e) const { return e >= user_begin_ && e < user_end_; }

  // Entity id of an item token; throws DataError when unknown.
  EntityId item_entity(const std::string& item) const;
  std::optional<EntityId> find_item_entity(const std::string& item) const;
  // Entity id a user token was interned as, if it occurs in the graph.
  std::optional<EntityId> find_user_entity(const std::string& user) const;

  // Merged positive (user, item-entity) pairs, sorted.
  std::span<const std::pair<EntityId, EntityId>> interactions() const { return interactions_; }

  std::span<const EntityId> neighbors(EntityId e, PredicateId p) const {
    return graph_.neighbors(e, p);
  }

 private:
  friend AugmentedGraph merge_interactions(
      const KnowledgeGraph&, const std::vector<std::pair<std::string, std::string>>&,
      const std::unordered_map<std::string, std::string>&);

  KnowledgeGraph graph_;
  PredicateId interacts_ = 0;
  EntityId user_begin_ = 0;
  EntityId user_end_ = 0;
  std::unordered_map<std::string, EntityId> item_entity_;
  std::vector<std::pair<EntityId, EntityId>> interactions_;
};

// Appends users as new entities and one interacts edge (plus inverse) per
// (user, item) pair. item_map maps item tokens to entity labels; tokens
// absent from it raise DataError naming the item. Items whose entity label
// is not yet in the graph are appended as new entities first.
AugmentedGraph merge_interactions(
    const KnowledgeGraph& kg,
    const std::vector<std::pair<std::string, std::string>>& interactions,
    const std::unordered_map<std::string, std::string>& item_map);

}  // namespace rgrec
