#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rgrec/common.hpp"

namespace rgrec {

struct Scored {
  double score;
  std::uint8_t label;
};

// Probability that a uniformly chosen positive outscores a uniformly chosen
// negative, ties counted 0.5 (rank-based). Throws ConfigError when one of
// the classes is absent.
double auc(const std::vector<Scored>& s);

// Precision/recall harmonic mean at `threshold` (score >= threshold counts
// as a predicted positive); 0 when nothing is predicted positive.
double f1(const std::vector<Scored>& s, double threshold = 0.5);

// 1-based rank of the positive among candidates: 1 + strictly-greater
// negatives + half of the score ties.
double positive_rank(double positive_score, const std::vector<double>& negative_scores);

struct RankMetrics {
  double hits;
  double ndcg;
};

// hits@k = mean [rank <= k]; ndcg@k = mean 1/log2(rank+1) over ranks <= k
// (single relevant item, ideal DCG = 1).
RankMetrics rank_metrics(const std::vector<double>& ranks, int k);

struct MetricStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over repeats
  std::vector<double> values;
};

MetricStats metric_stats(std::vector<double> values);

}  // namespace rgrec
