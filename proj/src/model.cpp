#include "rgrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "rgrec/metrics.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rgrec {

namespace {

constexpr char kMagic[8] = {'R', 'G', 'R', 'E', 'C', 'M', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

ExpansionTree expand(const KnowledgeGraph& g, EntityId u, const Rule& r, int fanout,
                     std::uint64_t seed, const Triple* masked) {
  const int h = static_cast<int>(r.body.size());
  if (h < 1) throw ConfigError("cannot expand an empty rule body");
  if (fanout < 1) throw ConfigError("fanout must be >= 1");

  ExpansionTree tree;
  tree.h = h;
  tree.fanout = fanout;
  tree.level_offset.resize(h + 2);
  std::size_t level_size = 1;
  tree.level_offset[0] = 0;
  for (int k = 0; k <= h; ++k) {
    tree.level_offset[k + 1] = tree.level_offset[k] + level_size;
    level_size *= static_cast<std::size_t>(fanout);
  }
  tree.nodes.assign(tree.level_offset[h + 1], kBlankEntity);
  tree.nodes[0] = u;

  Rng rng(hash_combine(seed, 0x74726565ULL));  // "tree"
  std::vector<EntityId> cand;
  std::vector<std::uint32_t> pick;

  PredicateId masked_inv = masked ? g.inverse(masked->p) : 0;
  for (int k = 0; k < h; ++k) {
    const PredicateId p = r.body[k];
    const std::size_t level_begin = tree.level_offset[k];
    const std::size_t level_count = tree.level_offset[k + 1] - level_begin;
    for (std::size_t idx = 0; idx < level_count; ++idx) {
      const std::size_t n = level_begin + idx;
      const EntityId e = tree.nodes[n];
      const std::size_t child0 = tree.level_offset[k + 1] + idx * static_cast<std::size_t>(fanout);
      if (e == kBlankEntity) continue;  // children already blank

      auto ns = g.neighbors(e, p);
      const EntityId* data = ns.data();
      std::size_t deg = ns.size();
      if (masked) {
        bool hit_fwd = (e == masked->s && p == masked->p);
        bool hit_inv = (e == masked->o && p == masked_inv);
        if (hit_fwd || hit_inv) {
          EntityId excluded = hit_fwd ? masked->o : masked->s;
          cand.clear();
          for (EntityId o : ns)
            if (o != excluded) cand.push_back(o);
          data = cand.data();
          deg = cand.size();
        }
      }

      if (deg == 0) continue;  // blank children: negative feedback
      if (deg >= static_cast<std::size_t>(fanout)) {
        pick.resize(deg);
        for (std::size_t i = 0; i < deg; ++i) pick[i] = static_cast<std::uint32_t>(i);
        for (int y = 0; y < fanout; ++y) {
          std::size_t j = static_cast<std::size_t>(y) + rng.next_below(deg - y);
          std::swap(pick[y], pick[j]);
          tree.nodes[child0 + y] = data[pick[y]];
        }
      } else {
        for (int y = 0; y < fanout; ++y)
          tree.nodes[child0 + y] = data[rng.next_below(deg)];
      }
    }
  }
  return tree;
}

ModelParams init_model_params(const KnowledgeGraph& g, const std::vector<Rule>& rules,
                              const std::vector<double>* w_init, int dim, std::uint64_t seed) {
  if (dim < 1) throw ConfigError("entity embedding dimension must be >= 1");
  for (const auto& r : rules)
    if (r.body.size() > kMaxRuleDepth)
      throw ConfigError("rule length exceeds the aggregator depth limit of 4");
  if (w_init && w_init->size() != rules.size())
    throw ConfigError("pre-trained weight vector length does not match rule count");

  ModelParams p;
  p.dim = dim;
  p.entity_rows = g.entity_count() + 1;
  p.rules = rules;
  p.master_seed = seed;
  p.graph_hash = g.content_hash();

  Rng rng(hash_combine(seed, 0x696e6974ULL));  // "init"
  const double range = 1.0 / std::sqrt(static_cast<double>(dim));
  p.entity.resize(static_cast<std::size_t>(p.entity_rows) * dim);
  for (auto& v : p.entity) v = rng.next_double(-range, range);
  for (int d = 0; d < kMaxRuleDepth; ++d) {
    p.agg_w[d].resize(static_cast<std::size_t>(dim) * 2 * dim);
    for (auto& v : p.agg_w[d]) v = rng.next_double(-range, range);
    p.agg_b[d].resize(dim);
    for (auto& v : p.agg_b[d]) v = rng.next_double(-range, range);
  }
  if (w_init) {
    p.rule_w = *w_init;
  } else {
    p.rule_w.resize(rules.size());
    for (auto& v : p.rule_w) v = rng.next_double(-range, range);
  }
  return p;
}

namespace {

thread_local TreeForward t_forward_scratch;
thread_local std::vector<double> t_in_scratch;

void forward_tree(const ExpansionTree& tree, const ModelParams& params, TreeForward& fwd) {
  const int d = params.dim;
  const int h = tree.h;
  const int Y = tree.fanout;
  const std::size_t T = tree.node_count();

  fwd.states.resize(static_cast<std::size_t>(h + 1) * T * d);
  fwd.preact_offset.assign(static_cast<std::size_t>(h + 1), 0);
  std::size_t total_updates = 0;
  for (int i = 1; i <= h; ++i) {
    fwd.preact_offset[i - 1] = total_updates * d;
    total_updates += tree.level_offset[h - i + 1];
  }
  fwd.preact_offset[h] = total_updates * d;
  fwd.preact.resize(total_updates * d);

  double* x0 = fwd.states.data();
  for (std::size_t n = 0; n < T; ++n) {
    const double* row = params.entity.data() +
                        static_cast<std::size_t>(params.entity_row(tree.nodes[n])) * d;
    std::memcpy(x0 + n * d, row, sizeof(double) * d);
  }

  auto& in = t_in_scratch;
  in.resize(2 * static_cast<std::size_t>(d));
  const double inv_y = 1.0 / static_cast<double>(Y);

  for (int i = 1; i <= h; ++i) {
    const double* prev = fwd.states.data() + static_cast<std::size_t>(i - 1) * T * d;
    double* curr = fwd.states.data() + static_cast<std::size_t>(i) * T * d;
    std::memcpy(curr, prev, sizeof(double) * T * d);
    const std::size_t updated = tree.level_offset[h - i + 1];
    const auto& W = params.agg_w[i - 1];
    const auto& b = params.agg_b[i - 1];
    const bool last = (i == h);
    double* z_slab = fwd.preact.data() + fwd.preact_offset[i - 1];

    int level = 0;
    for (std::size_t n = 0; n < updated; ++n) {
      while (n >= tree.level_offset[level + 1]) ++level;
      const std::size_t child0 =
          tree.level_offset[level + 1] + (n - tree.level_offset[level]) * Y;
      for (int j = 0; j < d; ++j) {
        in[j] = prev[n * d + j];
        double acc = 0.0;
        for (int y = 0; y < Y; ++y) acc += prev[(child0 + y) * d + j];
        in[d + j] = acc * inv_y;
      }
      double* z = z_slab + n * d;
      for (int r = 0; r < d; ++r) {
        double acc = b[r];
        const double* wrow = W.data() + static_cast<std::size_t>(r) * 2 * d;
        for (int c = 0; c < 2 * d; ++c) acc += wrow[c] * in[c];
        z[r] = acc;
        curr[n * d + r] = last ? std::tanh(acc) : (acc > 0.0 ? acc : 0.0);
      }
    }
  }
}

}  // namespace

std::vector<double> aggregate_rule(const ExpansionTree& tree, const ModelParams& params,
                                   TreeForward* cache) {
  TreeForward& fwd = cache ? *cache : t_forward_scratch;
  forward_tree(tree, params, fwd);
  const std::size_t T = tree.node_count();
  const double* root =
      fwd.states.data() + static_cast<std::size_t>(tree.h) * T * params.dim;
  return std::vector<double>(root, root + params.dim);
}

void ModelGrad::init(const ModelParams& p) {
  entity.assign(p.entity.size(), 0.0);
  row_flag.assign(p.entity_rows, 0);
  touched_rows.clear();
  for (int d = 0; d < kMaxRuleDepth; ++d) {
    agg_w[d].assign(p.agg_w[d].size(), 0.0);
    agg_b[d].assign(p.agg_b[d].size(), 0.0);
  }
  rule_w.assign(p.rule_w.size(), 0.0);
}

void ModelGrad::clear_sparse(const ModelParams& p) {
  for (std::uint32_t r : touched_rows) {
    std::fill_n(entity.begin() + static_cast<std::size_t>(r) * p.dim, p.dim, 0.0);
    row_flag[r] = 0;
  }
  touched_rows.clear();
  for (int d = 0; d < kMaxRuleDepth; ++d) {
    std::fill(agg_w[d].begin(), agg_w[d].end(), 0.0);
    std::fill(agg_b[d].begin(), agg_b[d].end(), 0.0);
  }
  std::fill(rule_w.begin(), rule_w.end(), 0.0);
}

namespace {

thread_local std::vector<double> t_gcur, t_gprev;

// Backpropagates droot through the cached forward pass of one tree.
void backward_tree(const ExpansionTree& tree, const TreeForward& fwd,
                   const ModelParams& params, std::span<const double> droot,
                   ModelGrad& grad) {
  const int d = params.dim;
  const int h = tree.h;
  const int Y = tree.fanout;
  const std::size_t T = tree.node_count();
  const double inv_y = 1.0 / static_cast<double>(Y);

  auto& gcur = t_gcur;
  auto& gprev = t_gprev;
  gcur.assign(T * d, 0.0);
  gprev.assign(T * d, 0.0);
  std::copy(droot.begin(), droot.end(), gcur.begin());

  auto& in = t_in_scratch;
  in.resize(2 * static_cast<std::size_t>(d));
  std::vector<double> gz(d), wsum(d);

  for (int i = h; i >= 1; --i) {
    const double* prev = fwd.states.data() + static_cast<std::size_t>(i - 1) * T * d;
    const double* curr = fwd.states.data() + static_cast<std::size_t>(i) * T * d;
    const std::size_t updated = tree.level_offset[h - i + 1];
    const double* z_slab = fwd.preact.data() + fwd.preact_offset[i - 1];
    const auto& W = params.agg_w[i - 1];
    auto& gW = grad.agg_w[i - 1];
    auto& gb = grad.agg_b[i - 1];
    const bool last = (i == h);

    std::fill(gprev.begin(), gprev.end(), 0.0);

    int level = 0;
    for (std::size_t n = 0; n < updated; ++n) {
      while (n >= tree.level_offset[level + 1]) ++level;
      const std::size_t child0 =
          tree.level_offset[level + 1] + (n - tree.level_offset[level]) * Y;
      const double* z = z_slab + n * d;

      bool any = false;
      for (int r = 0; r < d; ++r) {
        double up = gcur[n * d + r];
        double deriv = last ? 1.0 - curr[n * d + r] * curr[n * d + r] : (z[r] > 0.0 ? 1.0 : 0.0);
        gz[r] = up * deriv;
        any = any || gz[r] != 0.0;
      }
      if (!any) continue;

      for (int j = 0; j < d; ++j) {
        in[j] = prev[n * d + j];
        double acc = 0.0;
        for (int y = 0; y < Y; ++y) acc += prev[(child0 + y) * d + j];
        in[d + j] = acc * inv_y;
      }
      for (int r = 0; r < d; ++r) {
        if (gz[r] == 0.0) continue;
        double* gwrow = gW.data() + static_cast<std::size_t>(r) * 2 * d;
        for (int c = 0; c < 2 * d; ++c) gwrow[c] += gz[r] * in[c];
        gb[r] += gz[r];
      }
      for (int j = 0; j < d; ++j) {
        double self_acc = 0.0, child_acc = 0.0;
        for (int r = 0; r < d; ++r) {
          const double* wrow = W.data() + static_cast<std::size_t>(r) * 2 * d;
          self_acc += wrow[j] * gz[r];
          child_acc += wrow[d + j] * gz[r];
        }
        gprev[n * d + j] += self_acc;
        wsum[j] = child_acc * inv_y;
      }
      for (int y = 0; y < Y; ++y) {
        double* gchild = gprev.data() + (child0 + y) * d;
        for (int j = 0; j < d; ++j) gchild[j] += wsum[j];
      }
    }
    // states of nodes beyond the updated prefix pass through unchanged
    for (std::size_t n = updated; n < T; ++n)
      for (int j = 0; j < d; ++j) gprev[n * d + j] += gcur[n * d + j];
    std::swap(gcur, gprev);
  }

  for (std::size_t n = 0; n < T; ++n) {
    const std::uint32_t row = params.entity_row(tree.nodes[n]);
    if (!grad.row_flag[row]) {
      grad.row_flag[row] = 1;
      grad.touched_rows.push_back(row);
    }
    double* gr = grad.entity.data() + static_cast<std::size_t>(row) * d;
    for (int j = 0; j < d; ++j) gr[j] += gcur[n * d + j];
  }
}

}  // namespace

std::vector<double> user_representation(const KnowledgeGraph& g, EntityId u,
                                        const ModelParams& params, int fanout,
                                        std::uint64_t tree_seed) {
  std::vector<double> rep(params.dim, 0.0);
  for (std::size_t j = 0; j < params.rules.size(); ++j) {
    ExpansionTree tree = expand(g, u, params.rules[j], fanout, hash_combine(tree_seed, u, j));
    std::vector<double> root = aggregate_rule(tree, params);
    for (int t = 0; t < params.dim; ++t) rep[t] += params.rule_w[j] * root[t];
  }
  return rep;
}

double predict(std::span<const double> user_vec, EntityId item, const ModelParams& params) {
  if (item >= params.blank_row()) throw DataError("item entity out of range");
  const double* m = params.entity.data() + static_cast<std::size_t>(item) * params.dim;
  double s = 0.0;
  for (int j = 0; j < params.dim; ++j) s += user_vec[j] * m[j];
  return sigmoid(s);
}

FrozenBatch freeze_batch(const KnowledgeGraph& g, std::span<const LabeledPair> pairs,
                         const ModelParams& params, int fanout, std::uint64_t seed,
                         bool mask_target_edge, PredicateId interacts) {
  FrozenBatch batch;
  batch.pairs.assign(pairs.begin(), pairs.end());
  batch.trees.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& pr = batch.pairs[i];
    Triple masked{pr.user, interacts, pr.item};
    batch.trees[i].reserve(params.rules.size());
    for (std::size_t j = 0; j < params.rules.size(); ++j) {
      std::uint64_t s = hash_combine(seed, pr.user, pr.item, j);
      batch.trees[i].push_back(
          expand(g, pr.user, params.rules[j], fanout, s, mask_target_edge ? &masked : nullptr));
    }
  }
  return batch;
}

double batch_loss(const FrozenBatch& batch, const ModelParams& params, double mu) {
  const int d = params.dim;
  double acc = 0.0;
  std::vector<double> rep(d);
  for (std::size_t i = 0; i < batch.pairs.size(); ++i) {
    std::fill(rep.begin(), rep.end(), 0.0);
    for (std::size_t j = 0; j < params.rules.size(); ++j) {
      std::vector<double> root = aggregate_rule(batch.trees[i][j], params);
      for (int t = 0; t < d; ++t) rep[t] += params.rule_w[j] * root[t];
    }
    double q = predict(rep, batch.pairs[i].item, params);
    double err = static_cast<double>(batch.pairs[i].label) - q;
    acc += err * err;
  }
  return acc / static_cast<double>(batch.pairs.size()) + mu * l2_norm(params.rule_w);
}

double batch_grad(const FrozenBatch& batch, const ModelParams& params, double mu,
                  ModelGrad& grad) {
  const int d = params.dim;
  const double inv_n = 1.0 / static_cast<double>(batch.pairs.size());
  double loss_acc = 0.0;

  std::vector<double> rep(d), droot(d);
  std::vector<std::vector<double>> roots(params.rules.size());
  std::vector<TreeForward> caches(params.rules.size());

  for (std::size_t i = 0; i < batch.pairs.size(); ++i) {
    const auto& pr = batch.pairs[i];
    std::fill(rep.begin(), rep.end(), 0.0);
    for (std::size_t j = 0; j < params.rules.size(); ++j) {
      roots[j] = aggregate_rule(batch.trees[i][j], params, &caches[j]);
      for (int t = 0; t < d; ++t) rep[t] += params.rule_w[j] * roots[j][t];
    }
    const double* m = params.entity.data() + static_cast<std::size_t>(pr.item) * d;
    double s = 0.0;
    for (int t = 0; t < d; ++t) s += rep[t] * m[t];
    double q = sigmoid(s);
    double err = static_cast<double>(pr.label) - q;
    loss_acc += err * err;

    // d/ds of (l - q(s))^2 / N
    double ds = 2.0 * (q - static_cast<double>(pr.label)) * q * (1.0 - q) * inv_n;

    // item row
    if (!grad.row_flag[pr.item]) {
      grad.row_flag[pr.item] = 1;
      grad.touched_rows.push_back(pr.item);
    }
    double* gm = grad.entity.data() + static_cast<std::size_t>(pr.item) * d;
    for (int t = 0; t < d; ++t) gm[t] += ds * rep[t];

    for (std::size_t j = 0; j < params.rules.size(); ++j) {
      double dot_rm = 0.0;
      for (int t = 0; t < d; ++t) dot_rm += roots[j][t] * m[t];
      grad.rule_w[j] += ds * dot_rm;
      for (int t = 0; t < d; ++t) droot[t] = ds * params.rule_w[j] * m[t];
      backward_tree(batch.trees[i][j], caches[j], params, droot, grad);
    }
  }

  double wn = l2_norm(params.rule_w);
  if (mu > 0.0 && wn > 0.0) {
    for (std::size_t j = 0; j < params.rule_w.size(); ++j)
      grad.rule_w[j] += mu * params.rule_w[j] / wn;
  }
  return loss_acc * inv_n + mu * wn;
}

double gradient_check(const FrozenBatch& batch, ModelParams params, double mu, double eps) {
  ModelGrad grad;
  grad.init(params);
  batch_grad(batch, params, mu, grad);

  double max_rel = 0.0;
  auto check = [&](double* param, const double* analytic, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      double saved = param[i];
      param[i] = saved + eps;
      double lp = batch_loss(batch, params, mu);
      param[i] = saved - eps;
      double lm = batch_loss(batch, params, mu);
      param[i] = saved;
      double fd = (lp - lm) / (2.0 * eps);
      double rel = std::abs(analytic[i] - fd) / std::max(std::abs(analytic[i]) + std::abs(fd), 1e-6);
      max_rel = std::max(max_rel, rel);
    }
  };

  check(params.entity.data(), grad.entity.data(), params.entity.size());
  for (int dpt = 0; dpt < kMaxRuleDepth; ++dpt) {
    check(params.agg_w[dpt].data(), grad.agg_w[dpt].data(), params.agg_w[dpt].size());
    check(params.agg_b[dpt].data(), grad.agg_b[dpt].data(), params.agg_b[dpt].size());
  }
  check(params.rule_w.data(), grad.rule_w.data(), params.rule_w.size());
  return max_rel;
}

namespace {

struct DenseAdam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m1, m2;
  std::uint64_t t = 0;

  void init(std::size_t n, double lr_) {
    lr = lr_;
    m1.assign(n, 0.0);
    m2.assign(n, 0.0);
    t = 0;
  }
  void step_begin() { ++t; }
  void apply(double* param, const double* grad, std::size_t n, std::size_t offset = 0) {
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
      double g = grad[i];
      m1[offset + i] = beta1 * m1[offset + i] + (1.0 - beta1) * g;
      m2[offset + i] = beta2 * m2[offset + i] + (1.0 - beta2) * g * g;
      param[i] -= lr * (m1[offset + i] / c1) / (std::sqrt(m2[offset + i] / c2) + eps);
    }
  }
};

struct RowAdam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m1, m2;
  std::vector<std::uint64_t> step;

  void init(std::size_t n, std::size_t rows, double lr_) {
    lr = lr_;
    m1.assign(n, 0.0);
    m2.assign(n, 0.0);
    step.assign(rows, 0);
  }
  void apply_row(double* param, const double* grad, std::size_t row, std::size_t stride) {
    std::uint64_t t = ++step[row];
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    double* pm1 = m1.data() + row * stride;
    double* pm2 = m2.data() + row * stride;
    for (std::size_t j = 0; j < stride; ++j) {
      pm1[j] = beta1 * pm1[j] + (1.0 - beta1) * grad[j];
      pm2[j] = beta2 * pm2[j] + (1.0 - beta2) * grad[j] * grad[j];
      param[j] -= lr * (pm1[j] / c1) / (std::sqrt(pm2[j] / c2) + eps);
    }
  }
};

}  // namespace

TrainResult train_model(const AugmentedGraph& g, std::span<const LabeledPair> train_pairs,
                        std::span<const LabeledPair> valid_pairs,
                        const std::vector<Rule>& rules, const std::vector<double>* w_init,
                        const TrainConfig& cfg) {
  if (rules.empty()) throw ConfigError("cannot train with an empty rule set");
  if (train_pairs.empty()) throw DataError("empty training set");
  if (cfg.lr <= 0 || cfg.batch < 1 || cfg.max_epochs < 1 || cfg.fanout < 1)
    throw ConfigError("training hyperparameters must be positive");

  TrainResult result;
  ModelParams params = init_model_params(g.graph(), rules, w_init, cfg.dim, cfg.seed);

  ModelGrad grad;
  grad.init(params);

  DenseAdam w_opt;
  w_opt.init(params.rule_w.size(), cfg.lr);
  DenseAdam agg_opt;
  std::size_t agg_total = 0;
  for (int d = 0; d < kMaxRuleDepth; ++d)
    agg_total += params.agg_w[d].size() + params.agg_b[d].size();
  agg_opt.init(agg_total, cfg.lr);
  RowAdam ent_opt;
  ent_opt.init(params.entity.size(), params.entity_rows, cfg.lr);

  std::vector<std::size_t> order(train_pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double best_auc = -1.0;
  int stale = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(hash_combine(cfg.seed, 0x6f72646572ULL, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    const std::uint64_t tree_seed =
        hash_combine(cfg.seed, 0x7472656573ULL, static_cast<std::uint64_t>(epoch));

    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    std::vector<LabeledPair> chunk;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      std::size_t end = std::min(order.size(), start + cfg.batch);
      chunk.clear();
      for (std::size_t i = start; i < end; ++i) chunk.push_back(train_pairs[order[i]]);

      FrozenBatch batch = freeze_batch(g.graph(), chunk, params, cfg.fanout, tree_seed,
                                       cfg.mask_target_edge, g.interacts());
      double loss = batch_grad(batch, params, cfg.mu, grad);
      if (!std::isfinite(loss))
        throw NumericError("training diverged (non-finite loss) at epoch " +
                           std::to_string(epoch));
      epoch_loss += loss;
      ++n_batches;

      w_opt.step_begin();
      w_opt.apply(params.rule_w.data(), grad.rule_w.data(), params.rule_w.size());
      agg_opt.step_begin();
      std::size_t off = 0;
      for (int d = 0; d < kMaxRuleDepth; ++d) {
        agg_opt.apply(params.agg_w[d].data(), grad.agg_w[d].data(), params.agg_w[d].size(), off);
        off += params.agg_w[d].size();
        agg_opt.apply(params.agg_b[d].data(), grad.agg_b[d].data(), params.agg_b[d].size(), off);
        off += params.agg_b[d].size();
      }
      std::sort(grad.touched_rows.begin(), grad.touched_rows.end());
      for (std::uint32_t row : grad.touched_rows)
        ent_opt.apply_row(params.entity.data() + static_cast<std::size_t>(row) * params.dim,
                          grad.entity.data() + static_cast<std::size_t>(row) * params.dim, row,
                          static_cast<std::size_t>(params.dim));
      grad.clear_sparse(params);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(n_batches));

    double val_auc = 0.0;
    if (!valid_pairs.empty()) {
      std::uint64_t val_seed = hash_combine(cfg.seed, 0x76616cULL, static_cast<std::uint64_t>(epoch));
      std::vector<double> scores = score_pairs(g, params, valid_pairs, cfg.fanout, val_seed, cfg.threads);
      std::vector<Scored> sc(valid_pairs.size());
      for (std::size_t i = 0; i < valid_pairs.size(); ++i)
        sc[i] = {scores[i], valid_pairs[i].label};
      val_auc = auc(sc);
    } else {
      // no validation data: treat falling train loss as improvement
      val_auc = -result.epoch_losses.back();
    }
    result.val_aucs.push_back(val_auc);

    if (val_auc > best_auc) {
      best_auc = val_auc;
      result.params = params;
      result.best_epoch = epoch;
      result.best_val_auc = val_auc;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  if (result.best_epoch < 0) {
    result.params = std::move(params);
    result.best_epoch = 0;
  }
  return result;
}

std::vector<double> score_pairs(const AugmentedGraph& g, const ModelParams& params,
                                std::span<const LabeledPair> pairs, int fanout,
                                std::uint64_t tree_seed, int threads) {
  std::vector<EntityId> users;
  std::unordered_map<EntityId, std::size_t> user_slot;
  for (const auto& p : pairs) {
    if (user_slot.emplace(p.user, users.size()).second) users.push_back(p.user);
  }
  std::vector<std::vector<double>> reps(users.size());

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, threads))
#endif
  for (std::size_t i = 0; i < users.size(); ++i)
    reps[i] = user_representation(g.graph(), users[i], params, fanout, tree_seed);

  std::vector<double> out(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    out[i] = predict(reps[user_slot.at(pairs[i].user)], pairs[i].item, params);
  return out;
}

void save_model(const std::string& path, const ModelParams& p) {
  std::string buf;
  buf.append(kMagic, 8);
  put_u32_le(buf, kVersion);
  put_u32_le(buf, static_cast<std::uint32_t>(p.dim));
  put_u32_le(buf, p.entity_rows);
  put_u32_le(buf, static_cast<std::uint32_t>(p.rules.size()));
  put_u64_le(buf, p.master_seed);
  put_u64_le(buf, p.graph_hash);
  for (const auto& r : p.rules) {
    put_u32_le(buf, static_cast<std::uint32_t>(r.body.size()));
    for (PredicateId pid : r.body) put_u32_le(buf, pid);
  }
  for (int d = 0; d < kMaxRuleDepth; ++d) {
    for (double v : p.agg_w[d]) put_f64_le(buf, v);
    for (double v : p.agg_b[d]) put_f64_le(buf, v);
  }
  for (double v : p.entity) put_f64_le(buf, v);
  for (double v : p.rule_w) put_f64_le(buf, v);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model checkpoint: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("short write on model checkpoint: " + path);
}

ModelParams load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model checkpoint: " + path);
  std::string data(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > data.size()) throw DataError("corrupt model checkpoint (truncated): " + path);
  };
  auto u32 = [&]() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 4;
    return v;
  };
  auto u64 = [&]() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 8;
    return v;
  };
  auto f64 = [&]() {
    std::uint64_t v = u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  };

  need(8);
  if (std::memcmp(data.data(), kMagic, 8) != 0)
    throw DataError("corrupt model checkpoint (bad magic): " + path);
  pos = 8;
  std::uint32_t version = u32();
  if (version != kVersion)
    throw DataError("model checkpoint version mismatch in " + path);

  ModelParams p;
  p.dim = static_cast<int>(u32());
  p.entity_rows = u32();
  std::uint32_t n_rules = u32();
  p.master_seed = u64();
  p.graph_hash = u64();
  p.rules.resize(n_rules);
  for (auto& r : p.rules) {
    std::uint32_t len = u32();
    r.body.resize(len);
    for (auto& pid : r.body) pid = u32();
  }
  for (int d = 0; d < kMaxRuleDepth; ++d) {
    p.agg_w[d].resize(static_cast<std::size_t>(p.dim) * 2 * p.dim);
    for (auto& v : p.agg_w[d]) v = f64();
    p.agg_b[d].resize(p.dim);
    for (auto& v : p.agg_b[d]) v = f64();
  }
  p.entity.resize(static_cast<std::size_t>(p.entity_rows) * p.dim);
  for (auto& v : p.entity) v = f64();
  p.rule_w.resize(n_rules);
  for (auto& v : p.rule_w) v = f64();
  if (pos != data.size()) throw DataError("corrupt model checkpoint (trailing bytes): " + path);
  return p;
}

}  // namespace rgrec
