#include "rgrec/kge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace rgrec {

namespace {
constexpr char kMagic[8] = {'R', 'G', 'R', 'E', 'C', 'K', 'G', 'E'};
constexpr std::uint32_t kVersion = 1;

double logsigmoid(double x) {
  // stable: log(sigmoid(x)) = -log1p(exp(-x)) for x>=0, x - log1p(exp(x)) otherwise
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

const char* kge_kind_name(KgeKind k) { return k == KgeKind::rotate ? "rotate" : "transe"; }

KgeKind kge_kind_from_name(const std::string& name) {
  if (name == "rotate") return KgeKind::rotate;
  if (name == "transe") return KgeKind::transe;
  throw ConfigError("unknown embedding kind: " + name);
}

double EmbeddingModel::triple_distance(const Triple& t) const {
  const double* s = entity_ptr(t.s);
  const double* o = entity_ptr(t.o);
  const double* p = predicate_ptr(t.p);
  const double sg = predicate_sign(t.p);
  double d = 0.0;
  if (kind == KgeKind::rotate) {
    for (int j = 0; j < dim; ++j) {
      double phi = sg * p[j];
      double c = std::cos(phi), sn = std::sin(phi);
      double cre = s[2 * j] * c - s[2 * j + 1] * sn - o[2 * j];
      double cim = s[2 * j] * sn + s[2 * j + 1] * c - o[2 * j + 1];
      d += std::sqrt(cre * cre + cim * cim);
    }
  } else {
    double acc = 0.0;
    for (int j = 0; j < dim; ++j) {
      double v = s[j] + sg * p[j] - o[j];
      acc += v * v;
    }
    d = std::sqrt(acc);
  }
  return d;
}

void KgeGrad::init(const EmbeddingModel& m) {
  entity.assign(m.entity.size(), 0.0);
  predicate.assign(m.predicate.size(), 0.0);
  entity_flag.assign(m.entity_count, 0);
  base_flag.assign(m.base_predicate_count, 0);
  touched_entities.clear();
  touched_base_rows.clear();
}

void KgeGrad::clear(const EmbeddingModel& m) {
  const std::size_t es = m.entity_stride();
  for (std::uint32_t e : touched_entities) {
    std::fill_n(entity.begin() + e * es, es, 0.0);
    entity_flag[e] = 0;
  }
  for (std::uint32_t r : touched_base_rows) {
    std::fill_n(predicate.begin() + static_cast<std::size_t>(r) * m.dim, m.dim, 0.0);
    base_flag[r] = 0;
  }
  touched_entities.clear();
  touched_base_rows.clear();
}

namespace {

// All triples of a sample share the positive's predicate, so its cos/sin
// are computed once per sample and reused across distances and gradients.
// The per-dimension moduli of every triple are kept from the distance pass
// so the gradient pass skips the square roots.
struct SampleWorkspace {
  std::vector<double> cphi, sphi;
  std::vector<double> dist;
  std::vector<double> mods;  // (negatives+1) * dim, rotate only
};

thread_local SampleWorkspace t_kge_ws;

void prepare_trig(const EmbeddingModel& m, PredicateId p, SampleWorkspace& ws) {
  const double* phases = m.predicate_ptr(p);
  const double sg = m.predicate_sign(p);
  ws.cphi.resize(m.dim);
  ws.sphi.resize(m.dim);
  for (int j = 0; j < m.dim; ++j) {
    ws.cphi[j] = std::cos(phases[j]);
    ws.sphi[j] = sg * std::sin(phases[j]);  // cos is even, sin carries the sign
  }
}

double cached_distance(const EmbeddingModel& m, EntityId se, EntityId oe,
                       SampleWorkspace& ws, double* mods) {
  const double* s = m.entity_ptr(se);
  const double* o = m.entity_ptr(oe);
  double d = 0.0;
  if (m.kind == KgeKind::rotate) {
    for (int j = 0; j < m.dim; ++j) {
      double c = ws.cphi[j], sn = ws.sphi[j];
      double cre = s[2 * j] * c - s[2 * j + 1] * sn - o[2 * j];
      double cim = s[2 * j] * sn + s[2 * j + 1] * c - o[2 * j + 1];
      double mod = std::sqrt(cre * cre + cim * cim);
      if (mods) mods[j] = mod;
      d += mod;
    }
  } else {
    double acc = 0.0;
    for (int j = 0; j < m.dim; ++j) {
      double v = s[j] + ws.sphi[j] - o[j];  // sphi doubles as the signed vector
      acc += v * v;
    }
    d = std::sqrt(acc);
  }
  return d;
}

// dL/dd -> parameter gradients for one triple, trig and moduli reused.
void cached_distance_grad(const EmbeddingModel& m, EntityId se, PredicateId p, EntityId oe,
                          double gd, const SampleWorkspace& ws, const double* mods,
                          double triple_dist, KgeGrad& g) {
  const double* s = m.entity_ptr(se);
  const double* o = m.entity_ptr(oe);
  const double sg = m.predicate_sign(p);
  const std::uint32_t prow = m.base_row[p];

  const std::size_t es = m.entity_stride();
  double* gs = g.entity.data() + se * es;
  double* go = g.entity.data() + oe * es;
  double* gp = g.predicate.data() + static_cast<std::size_t>(prow) * m.dim;

  if (!g.entity_flag[se]) {
    g.entity_flag[se] = 1;
    g.touched_entities.push_back(se);
  }
  if (!g.entity_flag[oe]) {
    g.entity_flag[oe] = 1;
    g.touched_entities.push_back(oe);
  }
  if (!g.base_flag[prow]) {
    g.base_flag[prow] = 1;
    g.touched_base_rows.push_back(prow);
  }

  if (m.kind == KgeKind::rotate) {
    for (int j = 0; j < m.dim; ++j) {
      double mod = mods[j];
      if (mod < 1e-300) continue;
      double c = ws.cphi[j], sn = ws.sphi[j];
      double as = s[2 * j], bs = s[2 * j + 1];
      double cre = as * c - bs * sn - o[2 * j];
      double cim = as * sn + bs * c - o[2 * j + 1];
      double inv = gd / mod;
      gs[2 * j] += inv * (cre * c + cim * sn);
      gs[2 * j + 1] += inv * (-cre * sn + cim * c);
      go[2 * j] += -inv * cre;
      go[2 * j + 1] += -inv * cim;
      // d phi of |s e^{i phi} - o|, phi the signed phase; chain rule adds sg
      double dphi = inv * (cre * (-as * sn - bs * c) + cim * (as * c - bs * sn));
      gp[j] += dphi * sg;
    }
  } else {
    double d = triple_dist;
    if (d < 1e-300) return;
    double inv = gd / d;
    for (int j = 0; j < m.dim; ++j) {
      double v = s[j] + ws.sphi[j] - o[j];
      gs[j] += inv * v;
      go[j] += -inv * v;
      gp[j] += inv * v * sg;
    }
  }
}

void sample_distances(const EmbeddingModel& m, const KgeSample& s, SampleWorkspace& ws) {
  if (m.kind == KgeKind::rotate) {
    prepare_trig(m, s.pos.p, ws);
  } else {
    const double* phases = m.predicate_ptr(s.pos.p);
    const double sg = m.predicate_sign(s.pos.p);
    ws.sphi.resize(m.dim);
    for (int j = 0; j < m.dim; ++j) ws.sphi[j] = sg * phases[j];
  }
  ws.dist.resize(s.negatives.size() + 1);
  ws.dist[0] = cached_distance(m, s.pos.s, s.pos.o, ws);
  for (std::size_t i = 0; i < s.negatives.size(); ++i) {
    EntityId se = s.negatives[i].first ? s.negatives[i].second : s.pos.s;
    EntityId oe = s.negatives[i].first ? s.pos.o : s.negatives[i].second;
    ws.dist[i + 1] = cached_distance(m, se, oe, ws);
  }
}

std::vector<double> negative_weights(const KgeConfig& cfg, const SampleWorkspace& ws) {
  const std::size_t k = ws.dist.size() - 1;
  std::vector<double> w(k, k ? 1.0 / static_cast<double>(k) : 0.0);
  if (cfg.adv_temperature > 0.0 && k > 0) {
    double hi = -1e300;
    for (std::size_t i = 0; i < k; ++i) hi = std::max(hi, -cfg.adv_temperature * ws.dist[i + 1]);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      w[i] = std::exp(-cfg.adv_temperature * ws.dist[i + 1] - hi);
      z += w[i];
    }
    for (auto& v : w) v /= z;
  }
  return w;
}

double sample_loss_grad(const EmbeddingModel& m, const KgeSample& s, const KgeConfig& cfg,
                        KgeGrad* grad) {
  SampleWorkspace& ws = t_kge_ws;
  sample_distances(m, s, ws);
  auto w = negative_weights(cfg, ws);

  double loss = -logsigmoid(cfg.margin - ws.dist[0]);
  for (std::size_t i = 0; i < s.negatives.size(); ++i)
    loss -= w[i] * logsigmoid(ws.dist[i + 1] - cfg.margin);
  if (!grad) return loss;

  // d/dd[-logsigmoid(margin - d)] = sigmoid(d - margin)
  cached_distance_grad(m, s.pos.s, s.pos.p, s.pos.o, sigmoid(ws.dist[0] - cfg.margin), ws, *grad);
  for (std::size_t i = 0; i < s.negatives.size(); ++i) {
    // d/dd[-w * logsigmoid(d - margin)] = -w * sigmoid(margin - d)
    double gd = -w[i] * sigmoid(cfg.margin - ws.dist[i + 1]);
    EntityId se = s.negatives[i].first ? s.negatives[i].second : s.pos.s;
    EntityId oe = s.negatives[i].first ? s.pos.o : s.negatives[i].second;
    cached_distance_grad(m, se, s.pos.p, oe, gd, ws, *grad);
  }
  return loss;
}

}  // namespace

double kge_sample_loss(const EmbeddingModel& m, const KgeSample& s, const KgeConfig& cfg) {
  return sample_loss_grad(m, s, cfg, nullptr);
}

void kge_sample_grad(const EmbeddingModel& m, const KgeSample& s, const KgeConfig& cfg,
                     KgeGrad& grad) {
  sample_loss_grad(m, s, cfg, &grad);
}

EmbeddingModel init_embeddings(const KnowledgeGraph& g, const KgeConfig& cfg) {
  if (cfg.dim <= 0 || cfg.batch <= 0 || cfg.negatives <= 0 || cfg.lr <= 0 || cfg.margin <= 0)
    throw ConfigError("KGE hyperparameters must be positive");
  EmbeddingModel m;
  m.kind = cfg.kind;
  m.dim = cfg.dim;
  m.graph_hash = g.content_hash();
  m.entity_count = g.entity_count();
  m.predicate_count = g.predicate_count();
  m.base_row.resize(m.predicate_count);
  m.sign.resize(m.predicate_count);
  std::uint32_t next = 0;
  for (PredicateId p = 0; p < m.predicate_count; ++p) {
    if (!g.is_inverse(p)) {
      m.base_row[p] = next++;
      m.sign[p] = 1;
    }
  }
  m.base_predicate_count = next;
  for (PredicateId p = 0; p < m.predicate_count; ++p) {
    if (g.is_inverse(p)) {
      m.base_row[p] = m.base_row[g.inverse(p)];
      m.sign[p] = -1;
    }
  }

  Rng rng(hash_combine(cfg.seed, 0x6b6765ULL));  // "kge"
  const double range = (cfg.margin + 2.0) / cfg.dim;
  m.entity.resize(static_cast<std::size_t>(m.entity_count) * m.entity_stride());
  for (auto& v : m.entity) v = rng.next_double(-range, range);
  m.predicate.resize(static_cast<std::size_t>(m.base_predicate_count) * m.dim);
  if (cfg.kind == KgeKind::rotate) {
    for (auto& v : m.predicate) v = rng.next_double(-std::numbers::pi, std::numbers::pi);
  } else {
    for (auto& v : m.predicate) v = rng.next_double(-range, range);
  }
  return m;
}

namespace {

// Adam with per-row step counts: moments are only updated for rows touched
// by the batch, matching the usual sparse treatment of embedding tables.
struct SparseAdam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m1, m2;
  std::vector<std::uint64_t> step;

  void init(std::size_t params, std::size_t rows, double lr_) {
    lr = lr_;
    m1.assign(params, 0.0);
    m2.assign(params, 0.0);
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

EmbeddingModel train_embeddings(const KnowledgeGraph& g, const KgeConfig& cfg,
                                KgeTrainStats* stats) {
  if (g.triple_count() == 0) throw DataError("cannot train embeddings on an empty graph");
  EmbeddingModel m = init_embeddings(g, cfg);

  SparseAdam ent_opt, pred_opt;
  ent_opt.init(m.entity.size(), m.entity_count, cfg.lr);
  pred_opt.init(m.predicate.size(), m.base_predicate_count, cfg.lr);

  KgeGrad grad;
  grad.init(m);

  Rng rng(hash_combine(cfg.seed, 0x6b676574ULL));  // "kget"
  const std::size_t n_edges = g.triple_count();
  const std::size_t es = m.entity_stride();

  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(cfg.steps));
  KgeSample sample;
  sample.negatives.resize(static_cast<std::size_t>(cfg.negatives));

  for (int step = 0; step < cfg.steps; ++step) {
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      sample.pos = g.triple(static_cast<std::size_t>(rng.next_below(n_edges)));
      for (auto& [head, cand] : sample.negatives) {
        head = rng.next_below(2) == 0;
        cand = static_cast<EntityId>(rng.next_below(m.entity_count));
      }
      batch_loss += sample_loss_grad(m, sample, cfg, &grad);
    }
    batch_loss /= cfg.batch;
    if (!std::isfinite(batch_loss))
      throw NumericError("embedding training diverged at step " + std::to_string(step) +
                         " (loss not finite); lower kge.lr or raise kge.margin");
    losses.push_back(batch_loss);

    const double scale = 1.0 / cfg.batch;
    std::sort(grad.touched_entities.begin(), grad.touched_entities.end());
    for (std::uint32_t e : grad.touched_entities) {
      double* gp = grad.entity.data() + e * es;
      for (std::size_t j = 0; j < es; ++j) gp[j] *= scale;
      ent_opt.apply_row(m.entity.data() + e * es, gp, e, es);
    }
    std::sort(grad.touched_base_rows.begin(), grad.touched_base_rows.end());
    for (std::uint32_t r : grad.touched_base_rows) {
      double* gp = grad.predicate.data() + static_cast<std::size_t>(r) * m.dim;
      for (int j = 0; j < m.dim; ++j) gp[j] *= scale;
      pred_opt.apply_row(m.predicate.data() + static_cast<std::size_t>(r) * m.dim, gp, r,
                         static_cast<std::size_t>(m.dim));
    }
    grad.clear(m);
  }

  if (stats) {
    std::size_t decile = std::max<std::size_t>(1, losses.size() / 10);
    auto mean = [](auto first, auto last) {
      double s = 0.0;
      for (auto it = first; it != last; ++it) s += *it;
      return s / static_cast<double>(last - first);
    };
    stats->first_decile_loss = mean(losses.begin(), losses.begin() + decile);
    stats->last_decile_loss = mean(losses.end() - decile, losses.end());
    stats->step_losses = std::move(losses);
  }
  return m;
}

std::vector<double> compose(const EmbeddingModel& m, const Rule& r) {
  std::vector<double> acc(static_cast<std::size_t>(m.dim), 0.0);
  for (PredicateId p : r.body) {
    const double* row = m.predicate_ptr(p);
    const double sg = m.predicate_sign(p);
    for (int j = 0; j < m.dim; ++j) acc[j] += sg * row[j];
  }
  return acc;  // rotate: summed phases; transe: summed vectors
}

RuleScore composition_confidence(const EmbeddingModel& m, const Rule& r, PredicateId head) {
  std::vector<double> f = compose(m, r);
  const double* h = m.predicate_ptr(head);
  const double sg = m.predicate_sign(head);
  double acc = 0.0;
  if (m.kind == KgeKind::rotate) {
    // |e^{i a} - e^{i b}|^2 = 2 - 2 cos(a - b)
    for (int j = 0; j < m.dim; ++j) acc += std::max(0.0, 2.0 - 2.0 * std::cos(sg * h[j] - f[j]));
  } else {
    for (int j = 0; j < m.dim; ++j) {
      double v = sg * h[j] - f[j];
      acc += v * v;
    }
  }
  RuleScore s;
  s.value = acc == 0.0 ? 0.0 : -std::sqrt(acc);
  s.strategy = m.kind == KgeKind::rotate ? RuleStrategy::rotate : RuleStrategy::transe;
  return s;
}

void save_embeddings(const std::string& path, const EmbeddingModel& m) {
  std::string buf;
  buf.reserve(64 + m.entity.size() * 8 + m.predicate.size() * 8);
  buf.append(kMagic, 8);
  put_u32_le(buf, kVersion);
  put_u32_le(buf, m.kind == KgeKind::rotate ? 0u : 1u);
  put_u32_le(buf, static_cast<std::uint32_t>(m.dim));
  put_u64_le(buf, m.graph_hash);
  put_u32_le(buf, m.entity_count);
  put_u32_le(buf, m.base_predicate_count);
  put_u32_le(buf, m.predicate_count);
  for (std::uint32_t v : m.base_row) put_u32_le(buf, v);
  for (std::int8_t v : m.sign) buf.push_back(static_cast<char>(v));
  for (double v : m.entity) put_f64_le(buf, v);
  for (double v : m.predicate) put_f64_le(buf, v);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write embedding checkpoint: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("short write on embedding checkpoint: " + path);
}

namespace {

struct Reader {
  std::string data;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n) const {
    if (pos + n > data.size()) throw DataError("corrupt checkpoint (truncated): " + path);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    std::uint64_t v = u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::int8_t i8() {
    need(1);
    return static_cast<std::int8_t>(data[pos++]);
  }
};

Reader read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  Reader r;
  r.path = path;
  r.data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return r;
}

}  // namespace

EmbeddingModel load_embeddings(const std::string& path) {
  Reader r = read_file(path);
  r.need(8);
  if (std::memcmp(r.data.data(), kMagic, 8) != 0)
    throw DataError("corrupt checkpoint (bad magic): " + path);
  r.pos = 8;
  std::uint32_t version = r.u32();
  if (version != kVersion)
    throw DataError("checkpoint version mismatch in " + path + ": got " +
                    std::to_string(version) + ", expected " + std::to_string(kVersion));
  EmbeddingModel m;
  m.kind = r.u32() == 0 ? KgeKind::rotate : KgeKind::transe;
  m.dim = static_cast<int>(r.u32());
  m.graph_hash = r.u64();
  m.entity_count = r.u32();
  m.base_predicate_count = r.u32();
  m.predicate_count = r.u32();
  m.base_row.resize(m.predicate_count);
  for (auto& v : m.base_row) v = r.u32();
  m.sign.resize(m.predicate_count);
  for (auto& v : m.sign) v = r.i8();
  m.entity.resize(static_cast<std::size_t>(m.entity_count) * m.entity_stride());
  for (auto& v : m.entity) v = r.f64();
  m.predicate.resize(static_cast<std::size_t>(m.base_predicate_count) * m.dim);
  for (auto& v : m.predicate) v = r.f64();
  if (r.pos != r.data.size()) throw DataError("corrupt checkpoint (trailing bytes): " + path);
  return m;
}

}  // namespace rgrec
