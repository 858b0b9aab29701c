#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "rgrec/metrics.hpp"

using namespace rgrec;

TEST_CASE("auc hand cases") {
  CHECK(auc({{0.9, 1}, {0.1, 0}}) == 1.0);
  CHECK(auc({{0.1, 1}, {0.9, 0}}) == 0.0);
  CHECK(auc({{0.8, 1}, {0.6, 0}, {0.4, 1}}) == 0.5);
  CHECK(auc({{0.5, 1}, {0.5, 0}}) == 0.5);  // tie counts half
  CHECK_THROWS_AS(auc({{0.5, 1}}), ConfigError);
  CHECK_THROWS_AS(auc({{0.5, 0}, {0.2, 0}}), ConfigError);
}

TEST_CASE("f1 hand cases") {
  CHECK(f1({{0.9, 1}, {0.1, 0}}, 0.5) == 1.0);
  CHECK(f1({{0.3, 1}, {0.2, 1}, {0.1, 0}}, 0.5) == 0.0);
  // 2 TP, 1 FP, 1 FN
  std::vector<Scored> s = {{0.9, 1}, {0.8, 1}, {0.7, 0}, {0.2, 1}};
  CHECK(f1(s, 0.5) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("rank metrics hand cases") {
  CHECK(rank_metrics({1, 1, 1}, 5).hits == 1.0);
  CHECK(rank_metrics({1, 1, 1}, 5).ndcg == 1.0);
  CHECK(rank_metrics({3}, 5).ndcg == doctest::Approx(0.5));  // 1/log2(4)
  CHECK(rank_metrics({12}, 10).hits == 0.0);
  CHECK(rank_metrics({12}, 10).ndcg == 0.0);
  CHECK_THROWS_AS(rank_metrics({1}, 0), ConfigError);
}

TEST_CASE("positive rank counts strictly greater plus half ties") {
  CHECK(positive_rank(0.5, {0.9, 0.7, 0.1}) == 3.0);
  CHECK(positive_rank(0.5, {0.5, 0.5, 0.1}) == 2.0);  // 1 + 0 + 2/2
  CHECK(positive_rank(0.9, {}) == 1.0);
}

TEST_CASE("auc equals the pairwise oracle on random instances") {
  Rng rng(31);
  for (int t = 0; t < 300; ++t) {
    std::size_t n = 2 + rng.next_below(40);
    std::vector<Scored> s;
    bool have_pos = false, have_neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      // coarse scores force plenty of ties
      double score = static_cast<double>(rng.next_below(8)) / 8.0;
      std::uint8_t label = static_cast<std::uint8_t>(rng.next_below(2));
      have_pos = have_pos || label;
      have_neg = have_neg || !label;
      s.push_back({score, label});
    }
    if (!have_pos || !have_neg) continue;
    CHECK(auc(s) == doctest::Approx(oracle::auc_oracle(s)).epsilon(1e-12));
    CHECK(f1(s, 0.5) == doctest::Approx(oracle::f1_oracle(s, 0.5)).epsilon(1e-12));
  }
}

TEST_CASE("auc is invariant under strictly monotone transforms") {
  Rng rng(77);
  for (int t = 0; t < 50; ++t) {
    std::vector<Scored> s, mapped;
    for (int i = 0; i < 30; ++i) {
      double score = rng.next_double();
      std::uint8_t label = static_cast<std::uint8_t>(rng.next_below(2));
      s.push_back({score, label});
      mapped.push_back({std::exp(3.0 * score) - 2.0, label});
    }
    s[0].label = 1;
    mapped[0].label = 1;
    s[1].label = 0;
    mapped[1].label = 0;
    CHECK(auc(s) == doctest::Approx(auc(mapped)).epsilon(1e-12));
  }
}

TEST_CASE("hits and ndcg are non-decreasing in k and ndcg <= hits") {
  Rng rng(5);
  std::vector<double> ranks;
  for (int i = 0; i < 60; ++i) ranks.push_back(1.0 + static_cast<double>(rng.next_below(101)));
  double prev_hits = 0.0, prev_ndcg = 0.0;
  for (int k = 1; k <= 101; ++k) {
    auto rm = rank_metrics(ranks, k);
    CHECK(rm.hits >= prev_hits);
    CHECK(rm.ndcg >= prev_ndcg);
    CHECK(rm.ndcg <= rm.hits + 1e-12);
    prev_hits = rm.hits;
    prev_ndcg = rm.ndcg;
  }
}

TEST_CASE("metric stats: mean and sample stddev") {
  auto st = metric_stats({1.0, 2.0, 3.0});
  CHECK(st.mean == doctest::Approx(2.0));
  CHECK(st.stddev == doctest::Approx(1.0));
  auto single = metric_stats({4.0});
  CHECK(single.mean == 4.0);
  CHECK(single.stddev == 0.0);
}
