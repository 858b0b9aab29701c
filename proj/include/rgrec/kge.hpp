#pragma once

#include <string>
#include <vector>

#include "rgrec/common.hpp"
#include "rgrec/graph.hpp"
#include "rgrec/rules.hpp"

namespace rgrec {

enum class KgeKind { rotate, transe };

const char* kge_kind_name(KgeKind k);
KgeKind kge_kind_from_name(const std::string& name);

struct KgeConfig {
  KgeKind kind = KgeKind::rotate;
  int dim = 1024;               // d_re
  int negatives = 25;           // corrupted samples per positive
  double margin = 6.0;          // gamma
  double lr = 1e-4;
  int steps = 100000;
  int batch = 512;
  double adv_temperature = 1.0;  // 0 = uniform negative weighting
  std::uint64_t seed = 0;
};

// Entity/predicate embeddings used only for rule confidence.
//
// RotatE stores entities as interleaved (re, im) pairs and predicates as
// phase angles, so predicate elements have modulus exactly 1 by
// construction. Inverse predicates are tied to their base: the phase is
// negated (RotatE) / the vector negated (TransE), via `sign`.
class EmbeddingModel {
 public:
  KgeKind kind = KgeKind::rotate;
  int dim = 0;
  std::uint64_t graph_hash = 0;

  std::uint32_t entity_count = 0;
  std::uint32_t base_predicate_count = 0;
  std::uint32_t predicate_count = 0;

  std::vector<std::uint32_t> base_row;  // pid -> base predicate row
  std::vector<std::int8_t> sign;        // pid -> +1 (base) or -1 (inverse)

  std::vector<double> entity;     // rotate: entity_count * 2*dim; transe: entity_count * dim
  std::vector<double> predicate;  // base_predicate_count * dim

  std::size_t entity_stride() const { return kind == KgeKind::rotate ? 2 * dim : dim; }
  const double* entity_ptr(EntityId e) const { return entity.data() + e * entity_stride(); }
  double* entity_ptr(EntityId e) { return entity.data() + e * entity_stride(); }
  const double* predicate_ptr(PredicateId p) const {
    return predicate.data() + static_cast<std::size_t>(base_row[p]) * dim;
  }
  double predicate_sign(PredicateId p) const { return static_cast<double>(sign[p]); }

  // Distance of one triple under the model: RotatE sum of element moduli of
  // s∘p − o, TransE L2 norm of s + p − o.
  double triple_distance(const Triple& t) const;
};

// A positive triple with its corrupted negatives, used by the trainer and
// exposed for gradient tests. `corrupt_head` replaces the subject.
struct KgeSample {
  Triple pos;
  std::vector<std::pair<bool, EntityId>> negatives;
};

// Sparse gradient buffer parallel to the model parameters.
struct KgeGrad {
  std::vector<double> entity;
  std::vector<double> predicate;
  std::vector<std::uint32_t> touched_entities;
  std::vector<std::uint32_t> touched_base_rows;
  std::vector<std::uint8_t> entity_flag;
  std::vector<std::uint8_t> base_flag;

  void init(const EmbeddingModel& m);
  void clear(const EmbeddingModel& m);
};

// Self-adversarial logsigmoid loss of one sample; negative weights are
// softmax(-temperature * distance), treated as constants in the gradient
// (temperature 0 gives uniform weights, making the analytic gradient the
// exact derivative of this function).
double kge_sample_loss(const EmbeddingModel& m, const KgeSample& s, const KgeConfig& cfg);
void kge_sample_grad(const EmbeddingModel& m, const KgeSample& s, const KgeConfig& cfg,
                     KgeGrad& grad);

struct KgeTrainStats {
  double first_decile_loss = 0.0;
  double last_decile_loss = 0.0;
  std::vector<double> step_losses;
};

// Trains embeddings on all directed triples of g (inverse rows are tied, so
// each fact contributes symmetrically). Single-threaded and deterministic
// under cfg.seed. Throws NumericError when the loss becomes non-finite.
EmbeddingModel train_embeddings(const KnowledgeGraph& g, const KgeConfig& cfg,
                                KgeTrainStats* stats = nullptr);

// Fresh model with seeded initialization (before any training).
EmbeddingModel init_embeddings(const KnowledgeGraph& g, const KgeConfig& cfg);

// Body composition f(p): RotatE phase sums, TransE vector sums.
std::vector<double> compose(const EmbeddingModel& m, const Rule& r);

// conf(r) = -||head - compose(body)||_2 (complex L2 for RotatE). Always
// <= 0; 0 exactly when the body composes to the head rotation.
RuleScore composition_confidence(const EmbeddingModel& m, const Rule& r, PredicateId head);

// Binary checkpoint, little-endian, bit-exact round-trip.
void save_embeddings(const std::string& path, const EmbeddingModel& m);
EmbeddingModel load_embeddings(const std::string& path);

}  // namespace rgrec
