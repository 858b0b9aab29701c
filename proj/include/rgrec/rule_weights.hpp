#pragma once

#include <span>
#include <string>
#include <vector>

#include "rgrec/common.hpp"
#include "rgrec/dataset.hpp"
#include "rgrec/graph.hpp"
#include "rgrec/rules.hpp"

namespace rgrec {

// 0/1 rule-match features: N rows (labelled user-item pairs) times L
// columns (rules in canonical order).
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> values;  // row-major, rows*cols entries
  std::vector<std::uint8_t> labels;  // rows entries

  std::uint8_t at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

// entry (i, j) = 1 iff pair i instantiates rule j in the graph.
FeatureMatrix extract_features(const KnowledgeGraph& g, PredicateId head,
                               std::span<const LabeledPair> pairs,
                               std::span<const ScoredRule> rules, int threads = 1);

struct PretrainConfig {
  double lambda = 1e-4;  // L2 coefficient (on the norm, not its square)
  double lr = 1e-4;
  int batch = 256;
  int max_epochs = 200;
  double plateau_rel_tol = 1e-6;
  int plateau_patience = 5;
  std::uint64_t seed = 0;
};

struct RuleWeights {
  std::vector<double> w;
  double lambda = 0.0;
  int epochs_run = 0;
  double final_loss = 0.0;
};

// Loss of (1/N) sum (l_i - sigmoid(w.x_i))^2 + lambda * ||w||_2 at w.
double pretrain_loss(const FeatureMatrix& f, std::span<const double> w, double lambda);

// Its gradient (subgradient 0 for the norm term at w = 0).
std::vector<double> pretrain_grad(const FeatureMatrix& f, std::span<const double> w,
                                  double lambda, std::span<const std::size_t> rows = {});

// Minimizes the loss above with mini-batch Adam from w = 0; stops early on
// a relative-loss plateau. Deterministic under cfg.seed.
RuleWeights pretrain_weights(const FeatureMatrix& f, const PretrainConfig& cfg);

// Bit-packed cache of a feature matrix, guarded by a checksum of the rule
// order it was extracted under.
void save_features(const std::string& path, const FeatureMatrix& f, std::uint64_t rule_checksum);
FeatureMatrix load_features(const std::string& path, std::uint64_t expected_rule_checksum);

std::uint64_t rule_order_checksum(std::span<const ScoredRule> rules);

}  // namespace rgrec
