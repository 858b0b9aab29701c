#include "rgrec/rule_weights.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace rgrec {

namespace {

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

constexpr char kMagic[8] = {'R', 'G', 'R', 'E', 'C', 'F', 'T', 'R'};

}  // namespace

FeatureMatrix extract_features(const KnowledgeGraph& g, PredicateId head,
                               std::span<const LabeledPair> pairs,
                               std::span<const ScoredRule> rules, int threads) {
  FeatureMatrix f;
  f.rows = pairs.size();
  f.cols = rules.size();
  f.values.assign(f.rows * f.cols, 0);
  f.labels.resize(f.rows);
  (void)threads;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 64) num_threads(std::max(1, threads))
#endif
  for (std::size_t i = 0; i < f.rows; ++i) {
    f.labels[i] = pairs[i].label;
    for (std::size_t j = 0; j < f.cols; ++j)
      f.values[i * f.cols + j] =
          match_rule(g, pairs[i].user, pairs[i].item, rules[j].rule, head) ? 1 : 0;
  }
  return f;
}

double pretrain_loss(const FeatureMatrix& f, std::span<const double> w, double lambda) {
  if (f.rows == 0) throw ConfigError("pretrain loss needs at least one row");
  double acc = 0.0;
  for (std::size_t i = 0; i < f.rows; ++i) {
    double z = 0.0;
    const std::uint8_t* row = f.values.data() + i * f.cols;
    for (std::size_t j = 0; j < f.cols; ++j)
      if (row[j]) z += w[j];
    double err = static_cast<double>(f.labels[i]) - sigmoid(z);
    acc += err * err;
  }
  return acc / static_cast<double>(f.rows) + lambda * l2_norm(w);
}

std::vector<double> pretrain_grad(const FeatureMatrix& f, std::span<const double> w,
                                  double lambda, std::span<const std::size_t> rows) {
  std::vector<double> g(f.cols, 0.0);
  const std::size_t n = rows.empty() ? f.rows : rows.size();
  for (std::size_t t = 0; t < n; ++t) {
    std::size_t i = rows.empty() ? t : rows[t];
    double z = 0.0;
    const std::uint8_t* row = f.values.data() + i * f.cols;
    for (std::size_t j = 0; j < f.cols; ++j)
      if (row[j]) z += w[j];
    double q = sigmoid(z);
    // d/dz of (l - q)^2 = 2 (q - l) q (1 - q)
    double dz = 2.0 * (q - static_cast<double>(f.labels[i])) * q * (1.0 - q) /
                static_cast<double>(n);
    for (std::size_t j = 0; j < f.cols; ++j)
      if (row[j]) g[j] += dz;
  }
  double wn = l2_norm(w);
  if (lambda > 0.0 && wn > 0.0) {
    for (std::size_t j = 0; j < f.cols; ++j) g[j] += lambda * w[j] / wn;
  }
  return g;
}

RuleWeights pretrain_weights(const FeatureMatrix& f, const PretrainConfig& cfg) {
  if (f.rows == 0) throw ConfigError("cannot pre-train on an empty feature matrix");
  RuleWeights out;
  out.lambda = cfg.lambda;
  out.w.assign(f.cols, 0.0);

  std::vector<double> m1(f.cols, 0.0), m2(f.cols, 0.0);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t t = 0;

  std::vector<std::size_t> order(f.rows);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double prev_loss = pretrain_loss(f, out.w, cfg.lambda);
  int plateau = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng rng(hash_combine(cfg.seed, 0x707265ULL, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg.batch));
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::size_t end = std::min(order.size(), start + batch);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      auto g = pretrain_grad(f, out.w, cfg.lambda, rows);
      ++t;
      double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
      double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
      for (std::size_t j = 0; j < f.cols; ++j) {
        m1[j] = beta1 * m1[j] + (1.0 - beta1) * g[j];
        m2[j] = beta2 * m2[j] + (1.0 - beta2) * g[j] * g[j];
        out.w[j] -= cfg.lr * (m1[j] / c1) / (std::sqrt(m2[j] / c2) + eps);
      }
    }
    double loss = pretrain_loss(f, out.w, cfg.lambda);
    if (!std::isfinite(loss)) throw NumericError("rule-weight pre-training diverged");
    out.epochs_run = epoch + 1;
    out.final_loss = loss;
    double rel = std::abs(prev_loss - loss) / std::max(std::abs(prev_loss), 1e-12);
    if (rel < cfg.plateau_rel_tol) {
      if (++plateau >= cfg.plateau_patience) break;
    } else {
      plateau = 0;
    }
    prev_loss = loss;
  }
  return out;
}

std::uint64_t rule_order_checksum(std::span<const ScoredRule> rules) {
  Fnv64 h;
  h.update_u64(rules.size());
  for (const auto& sr : rules) {
    h.update_u64(sr.rule.body.size());
    for (PredicateId p : sr.rule.body) h.update_u64(p);
  }
  return h.digest();
}

void save_features(const std::string& path, const FeatureMatrix& f, std::uint64_t rule_checksum) {
  std::string buf;
  buf.append(kMagic, 8);
  put_u64_le(buf, rule_checksum);
  put_u64_le(buf, f.rows);
  put_u64_le(buf, f.cols);
  for (std::size_t i = 0; i < f.rows; ++i) buf.push_back(static_cast<char>(f.labels[i]));
  std::uint8_t acc = 0;
  int nbits = 0;
  for (std::uint8_t v : f.values) {
    acc = static_cast<std::uint8_t>(acc | ((v & 1) << nbits));
    if (++nbits == 8) {
      buf.push_back(static_cast<char>(acc));
      acc = 0;
      nbits = 0;
    }
  }
  if (nbits > 0) buf.push_back(static_cast<char>(acc));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature cache: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

FeatureMatrix load_features(const std::string& path, std::uint64_t expected_rule_checksum) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature cache: " + path);
  std::string data(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
  if (data.size() < 32 || std::memcmp(data.data(), kMagic, 8) != 0)
    throw DataError("corrupt feature cache: " + path);
  auto u64at = [&](std::size_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    return v;
  };
  std::uint64_t checksum = u64at(8);
  if (checksum != expected_rule_checksum)
    throw DataError("feature cache was built under a different rule order: " + path);
  FeatureMatrix f;
  f.rows = u64at(16);
  f.cols = u64at(24);
  std::size_t pos = 32;
  if (data.size() < pos + f.rows + (f.rows * f.cols + 7) / 8)
    throw DataError("corrupt feature cache (truncated): " + path);
  f.labels.resize(f.rows);
  for (std::size_t i = 0; i < f.rows; ++i)
    f.labels[i] = static_cast<std::uint8_t>(data[pos++]);
  f.values.resize(f.rows * f.cols);
  for (std::size_t i = 0; i < f.values.size(); ++i)
    f.values[i] = (static_cast<unsigned char>(data[pos + i / 8]) >> (i % 8)) & 1;
  return f;
}

}  // namespace rgrec
