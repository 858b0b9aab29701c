#pragma once

#include <string>
#include <vector>

#include "rgrec/dataset.hpp"
#include "rgrec/graph.hpp"
#include "rgrec/metrics.hpp"
#include "rgrec/model.hpp"

namespace rgrec {

struct EvalConfig {
  int repeats = 5;               // evaluation repetitions (derived seeds)
  std::vector<int> ks = {5, 10};
  int topk_negatives = 100;      // sampled negatives per test positive
  double f1_threshold = 0.5;
  int fanout = 4;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct EvalReport {
  std::vector<std::pair<std::string, MetricStats>> metrics;
  std::size_t ctr_records = 0;
  std::size_t topk_positives = 0;
  std::size_t dropped_records = 0;  // test records whose user has no training edge

  const MetricStats* find(const std::string& name) const;
};

// Positives of `set` plus 1:1 negatives: explicit label-0 records are kept
// as-is, sampling only fills the shortfall.
InteractionSet build_ctr_set(const InteractionSet& set, const InteractionUniverse& universe,
                             std::uint64_t seed);

// CTR metrics on test positives + 1:1 negatives (explicit label-0 records
// are used as-is, sampling fills the gap), and top-k metrics over
// `topk_negatives` sampled candidates per test positive. Repeated
// cfg.repeats times under derived seeds; mean and sample stddev reported.
EvalReport evaluate_model(const AugmentedGraph& g, const ModelParams& params,
                          const InteractionSet& test_set, const InteractionUniverse& universe,
                          const EvalConfig& cfg);

// `metric<TAB>mean<TAB>std` lines.
std::string report_machine_format(const EvalReport& report);
// Aligned human-readable table.
std::string report_table(const EvalReport& report);

}  // namespace rgrec
