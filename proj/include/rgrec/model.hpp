#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rgrec/common.hpp"
#include "rgrec/dataset.hpp"
#include "rgrec/graph.hpp"
#include "rgrec/rules.hpp"

namespace rgrec {

// Entity marker for blank nodes in expansion trees.
inline constexpr EntityId kBlankEntity = 0xfffffffeu;

// Fixed fan-out sampled neighbourhood of one (user, rule) pair. Level k
// holds Y^k nodes; children of the i-th node of level k are the Y nodes
// starting at level_offset(k+1) + i*Y. A node with no successor under the
// next body predicate gets blank children, and blank nodes stay blank.
struct ExpansionTree {
  int h = 0;       // rule length == number of levels below the root
  int fanout = 0;  // Y
  std::vector<EntityId> nodes;
  std::vector<std::size_t> level_offset;  // h+2 entries, last == nodes.size()

  std::size_t node_count() const { return nodes.size(); }
  std::size_t level_size(int k) const { return level_offset[k + 1] - level_offset[k]; }
};

// Samples the tree: Y distinct neighbours when at least Y exist, otherwise
// Y draws with replacement; zero successors produce blank children.
// Deterministic under seed. `masked` removes one directed edge (and its
// inverse) from the graph for this expansion.
ExpansionTree expand(const KnowledgeGraph& g, EntityId u, const Rule& r, int fanout,
                     std::uint64_t seed, const Triple* masked = nullptr);

// Per-depth affine aggregator, shared across rules; depth d in [1, 4].
struct ModelParams {
  int dim = 8;                    // d_r
  std::uint32_t entity_rows = 0;  // graph entities + 1 trailing blank row
  std::vector<double> entity;     // entity_rows * dim
  std::array<std::vector<double>, 4> agg_w;  // each dim x 2*dim, row-major
  std::array<std::vector<double>, 4> agg_b;  // each dim
  std::vector<double> rule_w;                // L
  std::vector<Rule> rules;                   // canonical order
  std::uint64_t master_seed = 0;
  std::uint64_t graph_hash = 0;

  std::uint32_t blank_row() const { return entity_rows - 1; }
  std::uint32_t entity_row(EntityId e) const { return e == kBlankEntity ? blank_row() : e; }
};

inline constexpr int kMaxRuleDepth = 4;

// Uniform [-1/sqrt(d_r), 1/sqrt(d_r)] initialization for the entity table
// and aggregator; rule weights taken from w_init when given (pre-trained),
// otherwise drawn from the same range.
ModelParams init_model_params(const KnowledgeGraph& g, const std::vector<Rule>& rules,
                              const std::vector<double>* w_init, int dim, std::uint64_t seed);

// Forward activations kept for backprop: state snapshot after every
// iteration plus the pre-activations of each update.
struct TreeForward {
  std::vector<double> states;  // (h+1) slabs of node_count*dim
  std::vector<double> preact;  // one entry per update, iteration-major
  std::vector<std::size_t> preact_offset;  // h+1 entries into preact
};

// Runs the h aggregation iterations (ReLU, tanh on the rule's last one)
// and returns the root state; (-1,1)^dim. Fills `cache` when given.
std::vector<double> aggregate_rule(const ExpansionTree& tree, const ModelParams& params,
                                   TreeForward* cache = nullptr);

// Eq-style combination: columns are the L per-rule root states, multiplied
// by the rule weight vector.
std::vector<double> user_representation(const KnowledgeGraph& g, EntityId u,
                                        const ModelParams& params, int fanout,
                                        std::uint64_t tree_seed);

// sigmoid(u . m). Throws DataError when the item row is out of range.
double predict(std::span<const double> user_vec, EntityId item, const ModelParams& params);

// Gradient buffer parallel to ModelParams.
struct ModelGrad {
  std::vector<double> entity;
  std::vector<std::uint32_t> touched_rows;
  std::vector<std::uint8_t> row_flag;
  std::array<std::vector<double>, 4> agg_w, agg_b;
  std::vector<double> rule_w;

  void init(const ModelParams& p);
  void clear_sparse(const ModelParams& p);
};

// Expansion trees frozen for one batch: trees[i][j] is the tree of pair i
// under rule j. Used for training batches and gradient checks.
struct FrozenBatch {
  std::vector<LabeledPair> pairs;
  std::vector<std::vector<ExpansionTree>> trees;
};

FrozenBatch freeze_batch(const KnowledgeGraph& g, std::span<const LabeledPair> pairs,
                         const ModelParams& params, int fanout, std::uint64_t seed,
                         bool mask_target_edge, PredicateId interacts);

// Mean squared error over the batch plus mu * ||W||_2 (norm, not squared).
double batch_loss(const FrozenBatch& batch, const ModelParams& params, double mu);

// Analytic gradient of batch_loss; accumulates into `grad` and returns the
// batch loss.
double batch_grad(const FrozenBatch& batch, const ModelParams& params, double mu,
                  ModelGrad& grad);

// Max relative error between batch_grad and central finite differences over
// every parameter group. 64-bit precision, trees frozen.
double gradient_check(const FrozenBatch& batch, ModelParams params, double mu, double eps);

struct TrainConfig {
  double lr = 0.05;     // Last.FM default; 0.0005 for the larger sets
  int batch = 128;      // Last.FM default; 64 for the larger sets
  double mu = 1e-4;
  int max_epochs = 40;
  int patience = 3;     // early stop on validation AUC
  int dim = 8;          // d_r
  int fanout = 4;       // Y
  std::uint64_t seed = 0;
  bool mask_target_edge = false;
  int threads = 1;
};

struct TrainResult {
  ModelParams params;  // best-validation checkpoint
  int best_epoch = -1;
  double best_val_auc = 0.0;
  std::vector<double> epoch_losses;
  std::vector<double> val_aucs;
};

// Mini-batch Adam over the labelled training pairs; trees are resampled
// every epoch from epoch-derived seeds. Deterministic under cfg.seed when
// cfg.threads == 1.
TrainResult train_model(const AugmentedGraph& g, std::span<const LabeledPair> train_pairs,
                        std::span<const LabeledPair> valid_pairs,
                        const std::vector<Rule>& rules, const std::vector<double>* w_init,
                        const TrainConfig& cfg);

// Scores (u, m) pairs with per-user representation caching; tree seeds are
// derived from (tree_seed, user, rule index) so scores do not depend on the
// order or grouping of the pairs.
std::vector<double> score_pairs(const AugmentedGraph& g, const ModelParams& params,
                                std::span<const LabeledPair> pairs, int fanout,
                                std::uint64_t tree_seed, int threads = 1);

// Model checkpoint (rules, entity table, aggregator, rule weights, seed);
// bit-exact round-trip.
void save_model(const std::string& path, const ModelParams& params);
ModelParams load_model(const std::string& path);

}  // namespace rgrec
