#include "rgrec/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace rgrec {

double auc(const std::vector<Scored>& s) {
  std::size_t pos = 0;
  for (const auto& r : s) pos += r.label;
  std::size_t neg = s.size() - pos;
  if (pos == 0 || neg == 0) throw ConfigError("AUC needs both classes present");

  // rank-sum with average ranks over ties
  std::vector<std::size_t> idx(s.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return s[a].score < s[b].score; });
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && s[idx[j]].score == s[idx[i]].score) ++j;
    double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t t = i; t < j; ++t)
      if (s[idx[t]].label) pos_rank_sum += avg_rank;
    i = j;
  }
  double p = static_cast<double>(pos);
  double n = static_cast<double>(neg);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double f1(const std::vector<Scored>& s, double threshold) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& r : s) {
    bool pred = r.score >= threshold;
    if (pred && r.label)
      ++tp;
    else if (pred && !r.label)
      ++fp;
    else if (!pred && r.label)
      ++fn;
  }
  if (tp == 0) return 0.0;
  double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

double positive_rank(double positive_score, const std::vector<double>& negative_scores) {
  double greater = 0.0, ties = 0.0;
  for (double v : negative_scores) {
    if (v > positive_score)
      greater += 1.0;
    else if (v == positive_score)
      ties += 1.0;
  }
  return 1.0 + greater + 0.5 * ties;
}

RankMetrics rank_metrics(const std::vector<double>& ranks, int k) {
  if (k < 1) throw ConfigError("rank metrics need k >= 1");
  if (ranks.empty()) return {0.0, 0.0};
  double hits = 0.0, ndcg = 0.0;
  for (double r : ranks) {
    if (r <= static_cast<double>(k)) {
      hits += 1.0;
      ndcg += 1.0 / std::log2(r + 1.0);
    }
  }
  double n = static_cast<double>(ranks.size());
  return {hits / n, ndcg / n};
}

MetricStats metric_stats(std::vector<double> values) {
  MetricStats st;
  st.values = std::move(values);
  if (st.values.empty()) return st;
  double sum = 0.0;
  for (double v : st.values) sum += v;
  st.mean = sum / static_cast<double>(st.values.size());
  if (st.values.size() > 1) {
    double acc = 0.0;
    for (double v : st.values) acc += (v - st.mean) * (v - st.mean);
    st.stddev = std::sqrt(acc / static_cast<double>(st.values.size() - 1));
  }
  return st;
}

}  // namespace rgrec
