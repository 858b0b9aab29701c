#include "rgrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rgrec {

const MetricStats* EvalReport::find(const std::string& name) const {
  for (const auto& [n, s] : metrics)
    if (n == name) return &s;
  return nullptr;
}

InteractionSet build_ctr_set(const InteractionSet& test_set, const InteractionUniverse& universe,
                             std::uint64_t seed) {
  InteractionSet positives = test_set.positives();
  std::vector<Interaction> explicit_negs;
  for (const auto& r : test_set.records)
    if (r.label == 0) explicit_negs.push_back(r);

  InteractionSet out = positives;
  for (auto& r : explicit_negs) out.records.push_back(r);
  if (explicit_negs.size() < positives.size()) {
    std::size_t need = positives.size() - explicit_negs.size();
    InteractionSet subset;
    subset.records.assign(positives.records.begin(),
                          positives.records.begin() + static_cast<std::ptrdiff_t>(need));
    InteractionSet sampled = sample_ctr_negatives(subset, universe, seed);
    for (const auto& r : sampled.records)
      if (r.label == 0) out.records.push_back(r);
  }
  return out;
}

EvalReport evaluate_model(const AugmentedGraph& g, const ModelParams& params,
                          const InteractionSet& test_set, const InteractionUniverse& universe,
                          const EvalConfig& cfg) {
  if (cfg.repeats < 1) throw ConfigError("evaluation needs repeats >= 1");
  EvalReport report;

  std::vector<double> aucs, f1s;
  std::vector<std::vector<double>> hits(cfg.ks.size()), ndcgs(cfg.ks.size());

  InteractionSet test_positives = test_set.positives();

  for (int rep = 0; rep < cfg.repeats; ++rep) {
    const std::uint64_t rep_seed = hash_combine(cfg.seed, 0x6576616cULL, static_cast<std::uint64_t>(rep));

    // --- CTR scenario ---
    InteractionSet ctr = build_ctr_set(test_set, universe, hash_combine(rep_seed, 1));
    std::size_t before = ctr.size();
    std::vector<LabeledPair> ctr_pairs = resolve_pairs(g, ctr, /*drop_unknown_users=*/true);
    report.dropped_records = before - ctr_pairs.size();
    report.ctr_records = ctr_pairs.size();
    if (!ctr_pairs.empty()) {
      std::vector<double> scores =
          score_pairs(g, params, ctr_pairs, cfg.fanout, hash_combine(rep_seed, 2), cfg.threads);
      std::vector<Scored> sc(ctr_pairs.size());
      for (std::size_t i = 0; i < sc.size(); ++i) sc[i] = {scores[i], ctr_pairs[i].label};
      aucs.push_back(auc(sc));
      f1s.push_back(f1(sc, cfg.f1_threshold));
    }

    // --- top-k scenario ---
    std::vector<LabeledPair> cand_pairs;
    std::vector<std::size_t> group_size;
    for (std::size_t i = 0; i < test_positives.records.size(); ++i) {
      const auto& r = test_positives.records[i];
      auto u = g.find_user_entity(r.user);
      if (!u) continue;
      auto candidates = sample_topk_candidates(
          r.user, r.item, universe, static_cast<std::size_t>(cfg.topk_negatives),
          hash_combine(rep_seed, 3, i), nullptr);
      group_size.push_back(candidates.size());
      for (std::size_t c = 0; c < candidates.size(); ++c)
        cand_pairs.push_back({*u, g.item_entity(candidates[c]), c == 0 ? std::uint8_t{1} : std::uint8_t{0}});
    }
    report.topk_positives = group_size.size();
    if (!group_size.empty()) {
      std::vector<double> scores =
          score_pairs(g, params, cand_pairs, cfg.fanout, hash_combine(rep_seed, 4), cfg.threads);
      std::vector<double> ranks;
      ranks.reserve(group_size.size());
      std::size_t off = 0;
      std::vector<double> negs;
      for (std::size_t gidx = 0; gidx < group_size.size(); ++gidx) {
        double pos_score = scores[off];
        negs.assign(scores.begin() + static_cast<std::ptrdiff_t>(off + 1),
                    scores.begin() + static_cast<std::ptrdiff_t>(off + group_size[gidx]));
        ranks.push_back(positive_rank(pos_score, negs));
        off += group_size[gidx];
      }
      for (std::size_t ki = 0; ki < cfg.ks.size(); ++ki) {
        RankMetrics rm = rank_metrics(ranks, cfg.ks[ki]);
        hits[ki].push_back(rm.hits);
        ndcgs[ki].push_back(rm.ndcg);
      }
    }
  }

  report.metrics.emplace_back("auc", metric_stats(std::move(aucs)));
  report.metrics.emplace_back("f1", metric_stats(std::move(f1s)));
  for (std::size_t ki = 0; ki < cfg.ks.size(); ++ki) {
    report.metrics.emplace_back("hits@" + std::to_string(cfg.ks[ki]),
                                metric_stats(std::move(hits[ki])));
    report.metrics.emplace_back("ndcg@" + std::to_string(cfg.ks[ki]),
                                metric_stats(std::move(ndcgs[ki])));
  }
  return report;
}

std::string report_machine_format(const EvalReport& report) {
  std::ostringstream out;
  for (const auto& [name, st] : report.metrics)
    out << name << '\t' << format_double(st.mean) << '\t' << format_double(st.stddev) << '\n';
  return out.str();
}

std::string report_table(const EvalReport& report) {
  std::ostringstream out;
  out << "metric        mean      std\n";
  char buf[96];
  for (const auto& [name, st] : report.metrics) {
    std::snprintf(buf, sizeof(buf), "%-12s  %.4f    %.4f\n", name.c_str(), st.mean, st.stddev);
    out << buf;
  }
  return out.str();
}

}  // namespace rgrec
