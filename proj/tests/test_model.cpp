#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "rgrec/model.hpp"

using namespace rgrec;

namespace {

// chain graph a0 -p-> a1 -p-> a2 ... with branching via q
AugmentedGraph genre_world() {
  auto kg = build_graph({
      {"a", "genre", "rock"},
      {"b", "genre", "rock"},
      {"c", "genre", "pop"},
      {"d", "genre", "pop"},
      {"e", "genre", "rock"},
  });
  std::unordered_map<std::string, std::string> imap;
  for (const char* i : {"a", "b", "c", "d", "e"}) imap[i] = i;
  return merge_interactions(kg, {{"1", "a"}, {"1", "b"}, {"2", "c"}, {"2", "d"}}, imap);
}

Rule genre_rule(const AugmentedGraph& g) {
  auto genre = *g.graph().predicates().find("genre");
  return Rule{{g.interacts(), genre, g.graph().inverse(genre)}};
}

}  // namespace

TEST_CASE("expansion tree shape: 1 + Y + Y^2 + Y^3") {
  auto g = genre_world();
  auto u = *g.find_user_entity("1");
  auto tree = expand(g.graph(), u, genre_rule(g), 4, 1);
  CHECK(tree.node_count() == 85);
  CHECK(tree.level_size(0) == 1);
  CHECK(tree.level_size(3) == 64);

  Rule two{{g.interacts(), *g.graph().predicates().find("genre")}};
  auto t2 = expand(g.graph(), u, two, 4, 1);
  CHECK(t2.node_count() == 21);
}

TEST_CASE("entities without successors get blank children, blanks stay blank") {
  auto kg = build_graph({{"x", "p", "y"}});
  std::unordered_map<std::string, std::string> imap = {{"x", "x"}};
  auto g = merge_interactions(kg, {{"1", "x"}}, imap);
  auto p = *g.graph().predicates().find("p");
  // body: interacts, p, p — y has no outgoing p edge
  Rule r{{g.interacts(), p, p}};
  auto u = *g.find_user_entity("1");
  auto tree = expand(g.graph(), u, r, 4, 7);
  // level 1 = x (sampled with replacement), level 2 = y, level 3 = blanks
  for (std::size_t n = tree.level_offset[3]; n < tree.level_offset[4]; ++n)
    CHECK(tree.nodes[n] == kBlankEntity);

  // blank subtrees are uniformly blank on a rule that dead-ends earlier
  Rule dead{{g.interacts(), *g.graph().predicates().find("p__inv"), p, p}};
  auto t2 = expand(g.graph(), u, dead, 3, 7);
  for (int level = 1; level + 1 <= t2.h; ++level) {
    for (std::size_t idx = 0; idx < t2.level_size(level); ++idx) {
      std::size_t n = t2.level_offset[level] + idx;
      if (t2.nodes[n] == kBlankEntity) {
        std::size_t child0 = t2.level_offset[level + 1] + idx * 3;
        for (int y = 0; y < 3; ++y) CHECK(t2.nodes[child0 + y] == kBlankEntity);
      }
    }
  }
}

TEST_CASE("expansion is deterministic and sampling is distinct when possible") {
  auto g = genre_world();
  auto u = *g.find_user_entity("1");
  auto a = expand(g.graph(), u, genre_rule(g), 4, 123);
  auto b = expand(g.graph(), u, genre_rule(g), 4, 123);
  CHECK(a.nodes == b.nodes);

  // rock has 3 members (a, b, e): fanout 2 must pick 2 distinct ones
  auto rock = *g.graph().entities().find("rock");
  auto ginv = g.graph().inverse(*g.graph().predicates().find("genre"));
  Rule peek{{ginv}};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto t = expand(g.graph(), rock, peek, 2, seed);
    CHECK(t.nodes[1] != t.nodes[2]);
  }
}

TEST_CASE("hand-computed aggregation: d_r=2, Y=1, h=1") {
  auto kg = build_graph({{"x", "p", "y"}});
  std::unordered_map<std::string, std::string> imap = {{"x", "x"}};
  auto g = merge_interactions(kg, {{"9", "x"}}, imap);
  auto u = *g.find_user_entity("9");

  Rule r{{g.interacts()}};  // single hop: u -> x
  ModelParams params;
  params.dim = 2;
  params.entity_rows = g.graph().entity_count() + 1;
  params.entity.assign(params.entity_rows * 2, 0.0);
  double* eu = params.entity.data() + u * 2;
  eu[0] = 0.3;
  eu[1] = -0.2;
  auto x = *g.graph().entities().find("x");
  params.entity[x * 2] = 0.5;
  params.entity[x * 2 + 1] = 0.7;
  for (int d = 0; d < 4; ++d) {
    params.agg_w[d].assign(2 * 4, 0.0);
    params.agg_b[d].assign(2, 0.0);
  }
  // W row-major 2x4, acting on [self(2) ; child_mean(2)]
  params.agg_w[0] = {0.1, 0.2, 0.3, 0.4, -0.5, 0.6, -0.7, 0.8};
  params.agg_b[0] = {0.05, -0.05};
  params.rules = {r};
  params.rule_w = {1.0};

  auto tree = expand(g.graph(), u, r, 1, 0);
  REQUIRE(tree.node_count() == 2);
  CHECK(tree.nodes[1] == x);
  auto out = aggregate_rule(tree, params);

  double in[4] = {0.3, -0.2, 0.5, 0.7};
  double z0 = 0.05 + 0.1 * in[0] + 0.2 * in[1] + 0.3 * in[2] + 0.4 * in[3];
  double z1 = -0.05 + -0.5 * in[0] + 0.6 * in[1] + -0.7 * in[2] + 0.8 * in[3];
  CHECK(out[0] == doctest::Approx(std::tanh(z0)).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(std::tanh(z1)).epsilon(1e-12));
}

TEST_CASE("zero embeddings and zero bias aggregate to zero") {
  auto g = genre_world();
  auto u = *g.find_user_entity("1");
  ModelParams params = init_model_params(g.graph(), {genre_rule(g)}, nullptr, 8, 3);
  std::fill(params.entity.begin(), params.entity.end(), 0.0);
  for (int d = 0; d < 4; ++d) std::fill(params.agg_b[d].begin(), params.agg_b[d].end(), 0.0);
  auto tree = expand(g.graph(), u, genre_rule(g), 4, 5);
  auto out = aggregate_rule(tree, params);
  CHECK(out.size() == 8);
  for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("aggregation output is bounded by the final tanh") {
  auto g = genre_world();
  auto u = *g.find_user_entity("2");
  ModelParams params = init_model_params(g.graph(), {genre_rule(g)}, nullptr, 8, 11);
  for (auto& v : params.entity) v *= 50.0;  // push activations far out
  auto tree = expand(g.graph(), u, genre_rule(g), 4, 5);
  for (double v : aggregate_rule(tree, params)) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("one-hot rule weights select that rule's representation exactly") {
  auto g = genre_world();
  auto u = *g.find_user_entity("1");
  auto genre = *g.graph().predicates().find("genre");
  std::vector<Rule> rules = {
      genre_rule(g),
      Rule{{g.interacts(), genre}},
      Rule{{g.interacts(), g.graph().inverse(g.interacts())}},
  };
  ModelParams params = init_model_params(g.graph(), rules, nullptr, 4, 17);
  params.rule_w = {0.0, 1.0, 0.0};

  std::uint64_t seed = 99;
  auto rep = user_representation(g.graph(), u, params, 4, seed);
  auto tree = expand(g.graph(), u, rules[1], 4, hash_combine(seed, u, std::uint64_t{1}));
  auto direct = aggregate_rule(tree, params);
  for (int j = 0; j < 4; ++j) CHECK(rep[j] == direct[j]);

  params.rule_w = {0.0, 0.0, 0.0};
  for (double v : user_representation(g.graph(), u, params, 4, seed)) CHECK(v == 0.0);
}

TEST_CASE("representation is linear in the rule weights") {
  auto g = genre_world();
  auto u = *g.find_user_entity("2");
  auto genre = *g.graph().predicates().find("genre");
  std::vector<Rule> rules = {genre_rule(g), Rule{{g.interacts(), genre}}};
  ModelParams params = init_model_params(g.graph(), rules, nullptr, 6, 23);

  std::vector<double> w1 = {0.4, -1.2}, w2 = {-0.3, 0.8};
  const double a = 2.5;
  std::uint64_t seed = 7;

  params.rule_w = w1;
  auto r1 = user_representation(g.graph(), u, params, 4, seed);
  params.rule_w = w2;
  auto r2 = user_representation(g.graph(), u, params, 4, seed);
  params.rule_w = {a * w1[0] + w2[0], a * w1[1] + w2[1]};
  auto rc = user_representation(g.graph(), u, params, 4, seed);
  for (int j = 0; j < 6; ++j) CHECK(rc[j] == doctest::Approx(a * r1[j] + r2[j]).epsilon(1e-9));
}

TEST_CASE("predict is the sigmoid of the inner product and is monotone") {
  ModelParams params;
  params.dim = 2;
  params.entity_rows = 3;
  params.entity = {1.0, 0.0, 0.0, 1.0, 0.0, 0.0};  // item rows + blank
  std::vector<double> u0 = {0.0, 0.0};
  CHECK(predict(u0, 0, params) == 0.5);
  std::vector<double> u1 = {1.0, 0.0};
  CHECK(predict(u1, 0, params) == doctest::Approx(0.7310586).epsilon(1e-7));

  double prev = 0.0;
  for (double s = -20; s <= 20; s += 0.5) {
    std::vector<double> uv = {s, 0.0};
    double q = predict(uv, 0, params);
    CHECK(q > prev);
    prev = q;
  }
  CHECK_THROWS_AS(predict(u1, 2, params), DataError);  // blank row is not an item
}

TEST_CASE("batch loss hand cases") {
  auto g = genre_world();
  auto u = *g.find_user_entity("1");
  std::vector<Rule> rules = {genre_rule(g)};
  ModelParams params = init_model_params(g.graph(), rules, nullptr, 4, 31);

  // item c is pop: user 1's rock-only trees never contain it, so its row
  // can be aimed without disturbing the aggregation
  auto free_item = g.item_entity("c");

  // representation over the batch's own frozen trees
  auto rep_of = [&](const FrozenBatch& b, const ModelParams& p) {
    std::vector<double> rep(p.dim, 0.0);
    for (std::size_t j = 0; j < p.rules.size(); ++j) {
      auto root = aggregate_rule(b.trees[0][j], p);
      for (int t = 0; t < p.dim; ++t) rep[t] += p.rule_w[j] * root[t];
    }
    return rep;
  };
  // aligns the item row so the inner product is exactly `target`
  auto aim_item = [&](ModelParams& p, const std::vector<double>& rep, double target) {
    double norm = 0;
    for (double v : rep) norm += v * v;
    REQUIRE(norm > 0);
    double* m = p.entity.data() + free_item * 4;
    for (int j = 0; j < 4; ++j) m[j] = rep[j] * target / norm;
  };

  std::vector<LabeledPair> one = {{u, free_item, 1}};
  auto batch = freeze_batch(g.graph(), one, params, 4, 5, false, g.interacts());
  for (const auto& tree : batch.trees[0])
    for (EntityId e : tree.nodes) REQUIRE(e != free_item);

  SUBCASE("prediction 0.5 on a positive gives 0.25") {
    double* m = params.entity.data() + free_item * 4;
    std::fill(m, m + 4, 0.0);  // inner product 0 -> q = 0.5
    CHECK(batch_loss(batch, params, 0.0) == doctest::Approx(0.25).epsilon(1e-12));
  }

  SUBCASE("mu ||W||: saturated prediction leaves exactly the penalty") {
    params.rules = {rules[0], rules[0]};
    params.rule_w = {3.0, 4.0};
    auto batch2 = freeze_batch(g.graph(), one, params, 4, 5, false, g.interacts());
    ModelParams saturated = params;
    aim_item(saturated, rep_of(batch2, saturated), 500.0);  // q rounds to 1.0
    double loss = batch_loss(batch2, saturated, 1.0);
    CHECK(loss == doctest::Approx(5.0).epsilon(1e-12));
  }

  SUBCASE("perfect saturated predictions, mu 0, loss under 1e-6") {
    ModelParams saturated = params;
    aim_item(saturated, rep_of(batch, saturated), 500.0);
    CHECK(batch_loss(batch, saturated, 0.0) < 1e-6);
  }
}

TEST_CASE("analytic gradients match finite differences") {
  auto g = genre_world();
  auto genre = *g.graph().predicates().find("genre");
  std::vector<Rule> rules = {genre_rule(g), Rule{{g.interacts(), genre}}};
  ModelParams params = init_model_params(g.graph(), rules, nullptr, 4, 41);

  auto u1 = *g.find_user_entity("1");
  auto u2 = *g.find_user_entity("2");
  std::vector<LabeledPair> pairs = {
      {u1, g.item_entity("a"), 1},
      {u1, g.item_entity("c"), 0},
      {u2, g.item_entity("d"), 1},
  };
  auto batch = freeze_batch(g.graph(), pairs, params, 2, 77, false, g.interacts());
  double max_rel = gradient_check(batch, params, 1e-3, 1e-5);
  CHECK(max_rel < 1e-4);
}

TEST_CASE("gradient of the W penalty term is mu * W / ||W||") {
  auto g = genre_world();
  std::vector<Rule> rules = {genre_rule(g)};
  ModelParams params = init_model_params(g.graph(), rules, nullptr, 4, 43);
  params.rule_w = {0.6};
  auto u = *g.find_user_entity("1");
  std::vector<LabeledPair> pairs = {{u, g.item_entity("a"), 1}};
  auto batch = freeze_batch(g.graph(), pairs, params, 2, 5, false, g.interacts());

  ModelGrad g0, g1;
  g0.init(params);
  g1.init(params);
  batch_grad(batch, params, 0.0, g0);
  const double mu = 0.25;
  batch_grad(batch, params, mu, g1);
  CHECK(g1.rule_w[0] - g0.rule_w[0] == doctest::Approx(mu * 1.0).epsilon(1e-12));  // W/||W|| = sign
}

TEST_CASE("near-perfect predictions give a vanishing mse gradient") {
  auto g = genre_world();
  std::vector<Rule> rules = {genre_rule(g)};
  ModelParams params = init_model_params(g.graph(), rules, nullptr, 4, 47);
  auto u = *g.find_user_entity("1");
  auto item = g.item_entity("c");  // outside user 1's trees

  std::vector<LabeledPair> pairs = {{u, item, 1}};
  auto batch = freeze_batch(g.graph(), pairs, params, 2, 5, false, g.interacts());
  std::vector<double> rep(4, 0.0);
  auto root = aggregate_rule(batch.trees[0][0], params);
  for (int t = 0; t < 4; ++t) rep[t] = params.rule_w[0] * root[t];
  double norm = 0;
  for (double v : rep) norm += v * v;
  REQUIRE(norm > 0);
  double* m = params.entity.data() + item * 4;
  for (int j = 0; j < 4; ++j) m[j] = rep[j] * 500.0 / norm;  // inner product 500, q -> 1

  ModelGrad grad;
  grad.init(params);
  batch_grad(batch, params, 0.0, grad);
  for (double v : grad.rule_w) CHECK(std::abs(v) < 1e-40);
}

TEST_CASE("training reduces the loss on a small planted dataset") {
  std::string dir = fixtures::temp_dir("rgrec_model_train");
  auto ds = fixtures::write_synthetic_dataset(dir, 3, 12, 18, 2, 5);
  auto data = load_interactions(ds.ratings_path);
  auto kg = load_kg_file(ds.kg_path);
  InteractionUniverse uni(data);
  std::unordered_map<std::string, std::string> imap;
  for (const auto& item : uni.items()) imap[item] = item;
  std::vector<std::pair<std::string, std::string>> pos;
  for (const auto& r : data.records) pos.emplace_back(r.user, r.item);
  auto g = merge_interactions(kg, pos, imap);

  MineConfig mc;
  mc.max_len = 3;
  auto rules = mine_rules(g, mc);
  REQUIRE_FALSE(rules.empty());

  auto train_set = resolve_pairs(g, sample_ctr_negatives(data, uni, 5));
  TrainConfig tc;
  tc.dim = 4;
  tc.fanout = 2;
  tc.batch = 16;
  tc.lr = 0.02;
  tc.max_epochs = 6;
  tc.patience = 6;
  tc.seed = 2;
  auto result = train_model(g, train_set, {}, rules, nullptr, tc);
  REQUIRE(result.epoch_losses.size() >= 2);
  CHECK(result.epoch_losses.back() < result.epoch_losses.front());

  SUBCASE("fixed seed reproduces the parameters bit for bit") {
    auto again = train_model(g, train_set, {}, rules, nullptr, tc);
    CHECK(again.params.entity == result.params.entity);
    CHECK(again.params.rule_w == result.params.rule_w);
    for (int d = 0; d < 4; ++d) CHECK(again.params.agg_w[d] == result.params.agg_w[d]);
  }

  SUBCASE("model checkpoint round-trips bit-exactly") {
    save_model(dir + "/m.bin", result.params);
    auto loaded = load_model(dir + "/m.bin");
    CHECK(loaded.entity == result.params.entity);
    CHECK(loaded.rule_w == result.params.rule_w);
    CHECK(loaded.rules.size() == result.params.rules.size());
    CHECK(loaded.master_seed == result.params.master_seed);
    save_model(dir + "/m2.bin", loaded);
    std::ifstream a(dir + "/m.bin", std::ios::binary), b(dir + "/m2.bin", std::ios::binary);
    std::string sa(std::istreambuf_iterator<char>(a), {}), sb(std::istreambuf_iterator<char>(b), {});
    CHECK(sa == sb);
  }

  SUBCASE("truncated model checkpoint is rejected") {
    save_model(dir + "/m.bin", result.params);
    std::ifstream in(dir + "/m.bin", std::ios::binary);
    std::string bytes(std::istreambuf_iterator<char>(in), {});
    in.close();
    std::ofstream out(dir + "/bad.bin", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
    out.close();
    CHECK_THROWS_AS(load_model(dir + "/bad.bin"), DataError);
  }
}

TEST_CASE("rules longer than the aggregator depth are rejected") {
  auto g = genre_world();
  Rule too_long{{g.interacts(), g.interacts(), g.interacts(), g.interacts(), g.interacts()}};
  CHECK_THROWS_AS(init_model_params(g.graph(), {too_long}, nullptr, 4, 1), ConfigError);
}

TEST_CASE("masked expansion never uses the target edge at the first hop") {
  auto g = genre_world();
  auto u = *g.find_user_entity("1");
  auto item = g.item_entity("a");
  Triple masked{u, g.interacts(), item};
  // user 1 interacts with a and b; masking a leaves b as the only child
  Rule r{{g.interacts()}};
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto tree = expand(g.graph(), u, r, 3, seed, &masked);
    for (std::size_t n = 1; n < tree.node_count(); ++n) CHECK(tree.nodes[n] != item);
  }
}
