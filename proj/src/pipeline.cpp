#include "rgrec/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "rgrec/dataset.hpp"
#include "rgrec/eval.hpp"
#include "rgrec/graph.hpp"
#include "rgrec/kge.hpp"
#include "rgrec/model.hpp"
#include "rgrec/rule_weights.hpp"
#include "rgrec/rules.hpp"

namespace fs = std::filesystem;

namespace rgrec {

namespace {

const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> defaults = {
      {"workspace", "workspace"},
      {"seed", "7"},
      {"threads", "1"},
      {"dataset.ratings", "data/lastfm/ratings_final.txt"},
      {"dataset.kg", "data/lastfm/kg_final.txt"},
      {"dataset.item_map", ""},
      {"split.fraction", "0.6"},
      {"mine.max_len", "3"},
      {"mine.pair_cap", "0"},
      {"mine.grounding_cap", "100000"},
      {"rules.strategy", "rotate"},
      {"rules.top_l", "30"},
      {"kge.kind", ""},
      {"kge.dim", "1024"},
      {"kge.negatives", "25"},
      {"kge.margin", "6.0"},
      {"kge.lr", "0.0001"},
      {"kge.steps", "100000"},
      {"kge.batch", "512"},
      {"kge.adv_temperature", "1.0"},
      {"pretrain.enabled", "true"},
      {"pretrain.lambda", "0.0001"},
      {"pretrain.lr", "0.0001"},
      {"pretrain.batch", "256"},
      {"pretrain.max_epochs", "200"},
      {"model.dim", "8"},
      {"model.fanout", "4"},
      {"model.lr", "0.05"},
      {"model.batch", "128"},
      {"model.mu", "0.0001"},
      {"model.max_epochs", "40"},
      {"model.patience", "3"},
      {"model.mask_target_edge", "false"},
      {"eval.runs", "1"},
      {"eval.repeats", "5"},
      {"eval.topk_negatives", "100"},
      {"eval.ks", "5,10"},
      {"eval.f1_threshold", "0.5"},
  };
  return defaults;
}

}  // namespace

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig cfg;
  cfg.values_ = default_values();
  return cfg;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
  PipelineConfig cfg = defaults();
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    auto pos = stripped.find('=');
    if (pos == std::string_view::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key{trim(stripped.substr(0, pos))};
    std::string value{trim(stripped.substr(pos + 1))};
    cfg.set(key, value);
  }
  return cfg;
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  if (default_values().find(key) == default_values().end())
    throw ConfigError("unknown configuration key: " + key);
  values_[key] = value;
}

void PipelineConfig::apply_override(const std::string& assignment) {
  auto pos = assignment.find('=');
  if (pos == std::string::npos)
    throw ConfigError("override must look like key=value, got: " + assignment);
  set(std::string(trim(assignment.substr(0, pos))), std::string(trim(assignment.substr(pos + 1))));
}

const std::string& PipelineConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown configuration key: " + key);
  return it->second;
}

std::int64_t PipelineConfig::integer(const std::string& key) const {
  const std::string& v = str(key);
  char* end = nullptr;
  long long out = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError(key + " must be an integer, got: " + v);
  return out;
}

double PipelineConfig::real(const std::string& key) const {
  const std::string& v = str(key);
  char* end = nullptr;
  double out = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError(key + " must be a number, got: " + v);
  return out;
}

bool PipelineConfig::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(key + " must be a boolean, got: " + v);
}

void PipelineConfig::validate() const {
  strategy_from_name(str("rules.strategy"));
  double f = real("split.fraction");
  bool ok = false;
  for (double allowed : {0.2, 0.4, 0.6}) ok = ok || std::abs(f - allowed) < 1e-9;
  if (!ok) throw ConfigError("split.fraction must be 0.2, 0.4 or 0.6");
  if (integer("mine.max_len") < 2) throw ConfigError("mine.max_len must be >= 2");
  if (integer("model.dim") < 1 || integer("model.fanout") < 1)
    throw ConfigError("model.dim and model.fanout must be >= 1");
  if (integer("eval.repeats") < 1 || integer("eval.runs") < 1)
    throw ConfigError("eval.repeats and eval.runs must be >= 1");
  if (!str("kge.kind").empty()) kge_kind_from_name(str("kge.kind"));
  if (integer("threads") < 1) throw ConfigError("threads must be >= 1");
}

std::string PipelineConfig::serialize() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  return out.str();
}

std::uint64_t file_content_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file for hashing: " + path);
  Fnv64 h;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) h.update(buf, static_cast<std::size_t>(in.gcount()));
  return h.digest();
}

namespace {

std::vector<int> parse_ks(const std::string& spec) {
  std::vector<int> ks;
  for (const auto& tok : split(spec, ',')) {
    auto t = trim(tok);
    if (t.empty()) continue;
    ks.push_back(std::stoi(std::string(t)));
  }
  if (ks.empty()) throw ConfigError("eval.ks must name at least one cutoff");
  return ks;
}

// Resolved embedding kind: follow the filtering strategy unless pinned.
KgeKind resolved_kge_kind(const PipelineConfig& cfg) {
  if (!cfg.str("kge.kind").empty()) return kge_kind_from_name(cfg.str("kge.kind"));
  if (cfg.str("rules.strategy") == "transe") return KgeKind::transe;
  return KgeKind::rotate;
}

struct Context {
  const PipelineConfig& cfg;
  std::string ws;

  std::optional<InteractionSet> data_;
  std::optional<KnowledgeGraph> kg_;
  std::optional<DatasetSplit> split_;
  std::optional<InteractionUniverse> universe_;
  std::optional<InteractionSet> used_train_;
  std::optional<AugmentedGraph> graph_;

  explicit Context(const PipelineConfig& c) : cfg(c), ws(c.workspace()) {}

  std::string path(const std::string& name) const { return ws + "/" + name; }

  const InteractionSet& data() {
    if (!data_) data_ = load_interactions(cfg.str("dataset.ratings"));
    return *data_;
  }

  const KnowledgeGraph& base_kg() {
    if (!kg_) kg_ = load_kg_file(cfg.str("dataset.kg"));
    return *kg_;
  }

  const InteractionUniverse& universe() {
    if (!universe_) universe_ = InteractionUniverse(data());
    return *universe_;
  }

  std::vector<std::size_t> read_indices(const std::string& name) {
    std::ifstream in(path(name));
    if (!in)
      throw DataError("missing upstream artifact " + name + " (run stage ingest first)");
    std::vector<std::size_t> idx;
    std::string line;
    while (std::getline(in, line)) {
      auto t = trim(line);
      if (!t.empty()) idx.push_back(std::stoull(std::string(t)));
    }
    return idx;
  }

  const DatasetSplit& dataset_split() {
    if (!split_) {
      split_ = split_from_indices(data(), read_indices("split_train.idx"),
                                  read_indices("split_valid.idx"),
                                  read_indices("split_test.idx"), cfg.seed());
    }
    return *split_;
  }

  // Cold-start runs train on the leading floor(N * fraction) records of the
  // (already permuted) train part; 0.6 keeps all of it.
  const InteractionSet& used_train() {
    if (!used_train_) {
      const auto& tr = dataset_split().train;
      double f = cfg.real("split.fraction");
      std::size_t n_used =
          std::min(tr.size(), static_cast<std::size_t>(static_cast<double>(data().size()) * f + 1e-9));
      InteractionSet s;
      s.records.assign(tr.records.begin(), tr.records.begin() + static_cast<std::ptrdiff_t>(n_used));
      used_train_ = std::move(s);
    }
    return *used_train_;
  }

  std::unordered_map<std::string, std::string> item_map() {
    std::unordered_map<std::string, std::string> map;
    const std::string& path = cfg.str("dataset.item_map");
    if (!path.empty()) {
      std::ifstream in(path);
      if (!in) throw DataError("cannot open item map: " + path);
      std::string line;
      std::size_t lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split(line, '\t');
        if (fields.size() != 2)
          throw DataError(path + ":" + std::to_string(lineno) + ": expected item<TAB>entity");
        map[std::string(trim(fields[0]))] = std::string(trim(fields[1]));
      }
    } else {
      for (const auto& item : universe().items()) map[item] = item;  // KGCN convention
    }
    return map;
  }

  const AugmentedGraph& graph() {
    if (!graph_) {
      std::vector<std::pair<std::string, std::string>> pairs;
      for (const auto& r : used_train().records)
        if (r.label == 1) pairs.emplace_back(r.user, r.item);
      graph_ = merge_interactions(base_kg(), pairs, item_map());
    }
    return *graph_;
  }
};

// ---- stage stamps -------------------------------------------------------

struct Stamp {
  std::uint64_t input_hash = 0;
  std::vector<std::pair<std::string, std::uint64_t>> artifacts;
};

std::string stamp_path(const Context& ctx, const std::string& stage) {
  return ctx.path(stage + ".stamp");
}

std::optional<Stamp> read_stamp(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  Stamp s;
  std::string line;
  while (std::getline(in, line)) {
    auto fields = split(line, '\t');
    if (fields.size() == 2 && fields[0] == "input")
      s.input_hash = std::stoull(fields[1], nullptr, 16);
    else if (fields.size() == 3 && fields[0] == "artifact")
      s.artifacts.emplace_back(fields[1], std::stoull(fields[2], nullptr, 16));
  }
  return s;
}

void write_stamp(const Context& ctx, const std::string& stage, std::uint64_t input_hash,
                 const std::vector<std::string>& artifacts) {
  std::ofstream out(stamp_path(ctx, stage), std::ios::binary);
  out << "input\t" << to_hex(input_hash) << "\n";
  for (const auto& a : artifacts)
    out << "artifact\t" << a << "\t" << to_hex(file_content_hash(ctx.path(a))) << "\n";
}

// Fresh: stamp matches the current input hash and every artifact matches
// its recorded content hash. An artifact whose bytes differ from the stamp
// is a hard error: it was edited or corrupted after being produced.
bool stage_fresh(const Context& ctx, const std::string& stage, std::uint64_t input_hash,
                 const std::vector<std::string>& artifacts) {
  if (ctx.cfg.force) return false;
  auto stamp = read_stamp(stamp_path(ctx, stage));
  if (!stamp) return false;
  for (const auto& [name, recorded] : stamp->artifacts) {
    if (!fs::exists(ctx.path(name))) return false;
    if (file_content_hash(ctx.path(name)) != recorded)
      throw DataError("stale artifact " + name + " in " + ctx.ws +
                      ": content differs from its stamp (rerun stage " + stage +
                      " with --force)");
  }
  if (stamp->input_hash != input_hash) return false;
  for (const auto& a : artifacts) {
    bool listed = false;
    for (const auto& [name, _] : stamp->artifacts) listed = listed || name == a;
    if (!listed) return false;
  }
  return true;
}

void hash_config_keys(Fnv64& h, const PipelineConfig& cfg, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    h.update(k);
    h.update(cfg.str(k));
  }
}

std::uint64_t artifact_hash(const Context& ctx, const std::string& name) {
  std::string p = ctx.path(name);
  if (!fs::exists(p))
    throw DataError("missing upstream artifact " + name + " in " + ctx.ws);
  return file_content_hash(p);
}

// ---- stage input hashes -------------------------------------------------

std::uint64_t input_hash_ingest(Context& ctx) {
  Fnv64 h;
  h.update("ingest");
  h.update_u64(ctx.cfg.seed());
  h.update_u64(file_content_hash(ctx.cfg.str("dataset.ratings")));
  return h.digest();
}

void hash_graph_inputs(Fnv64& h, Context& ctx) {
  h.update_u64(file_content_hash(ctx.cfg.str("dataset.kg")));
  const std::string& imap = ctx.cfg.str("dataset.item_map");
  if (!imap.empty()) h.update_u64(file_content_hash(imap));
  hash_config_keys(h, ctx.cfg, {"split.fraction"});
  h.update_u64(artifact_hash(ctx, "split_train.idx"));
  h.update_u64(artifact_hash(ctx, "split_valid.idx"));
  h.update_u64(artifact_hash(ctx, "split_test.idx"));
}

std::uint64_t input_hash_mine(Context& ctx) {
  Fnv64 h;
  h.update("mine");
  h.update_u64(ctx.cfg.seed());
  hash_graph_inputs(h, ctx);
  hash_config_keys(h, ctx.cfg, {"mine.max_len", "mine.pair_cap"});
  return h.digest();
}

std::uint64_t input_hash_embed(Context& ctx) {
  Fnv64 h;
  h.update("embed");
  h.update_u64(ctx.cfg.seed());
  hash_graph_inputs(h, ctx);
  h.update(kge_kind_name(resolved_kge_kind(ctx.cfg)));
  hash_config_keys(h, ctx.cfg, {"kge.dim", "kge.negatives", "kge.margin", "kge.lr",
                                "kge.steps", "kge.batch", "kge.adv_temperature"});
  return h.digest();
}

std::uint64_t input_hash_score(Context& ctx) {
  Fnv64 h;
  h.update("score-rules");
  h.update_u64(artifact_hash(ctx, "rules_mined.tsv"));
  hash_config_keys(h, ctx.cfg, {"rules.strategy", "rules.top_l", "mine.grounding_cap"});
  if (ctx.cfg.str("rules.strategy") != "cwa") h.update_u64(artifact_hash(ctx, "embeddings.bin"));
  hash_graph_inputs(h, ctx);
  return h.digest();
}

std::uint64_t input_hash_pretrain(Context& ctx) {
  Fnv64 h;
  h.update("pretrain");
  h.update_u64(ctx.cfg.seed());
  h.update_u64(artifact_hash(ctx, "rules_scored.tsv"));
  hash_graph_inputs(h, ctx);
  hash_config_keys(h, ctx.cfg,
                   {"pretrain.lambda", "pretrain.lr", "pretrain.batch", "pretrain.max_epochs"});
  return h.digest();
}

std::uint64_t input_hash_train(Context& ctx) {
  Fnv64 h;
  h.update("train");
  h.update_u64(ctx.cfg.seed());
  h.update_u64(artifact_hash(ctx, "rules_scored.tsv"));
  if (ctx.cfg.flag("pretrain.enabled")) h.update_u64(artifact_hash(ctx, "rule_weights.tsv"));
  hash_graph_inputs(h, ctx);
  hash_config_keys(h, ctx.cfg,
                   {"pretrain.enabled", "model.dim", "model.fanout", "model.lr", "model.batch",
                    "model.mu", "model.max_epochs", "model.patience", "model.mask_target_edge"});
  return h.digest();
}

std::uint64_t input_hash_evaluate(Context& ctx) {
  Fnv64 h;
  h.update("evaluate");
  h.update_u64(ctx.cfg.seed());
  h.update_u64(artifact_hash(ctx, "model.bin"));
  hash_graph_inputs(h, ctx);
  hash_config_keys(h, ctx.cfg, {"eval.repeats", "eval.topk_negatives", "eval.ks",
                                "eval.f1_threshold", "model.fanout"});
  return h.digest();
}

// ---- stage bodies -------------------------------------------------------

StageResult run_stage_inner(const std::string& stage, Context& ctx);

void ensure_stage(const std::string& stage, Context& ctx) { run_stage_inner(stage, ctx); }

StageResult finish_stage(Context& ctx, const std::string& stage, std::uint64_t input_hash,
                         std::vector<std::string> artifacts) {
  write_stamp(ctx, stage, input_hash, artifacts);
  return {std::move(artifacts), false};
}

StageResult stage_ingest(Context& ctx) {
  const std::vector<std::string> artifacts = {"split_train.idx", "split_valid.idx",
                                              "split_test.idx", "dataset.meta"};
  std::uint64_t ih = input_hash_ingest(ctx);
  if (stage_fresh(ctx, "ingest", ih, artifacts)) return {artifacts, true};

  const InteractionSet& data = ctx.data();
  if (data.size() < 5) throw DataError("dataset too small to split (need at least 5 records)");
  DatasetSplit sp = split(data, ctx.cfg.seed());

  auto write_idx = [&](const std::string& name, const std::vector<std::size_t>& idx) {
    std::ofstream out(ctx.path(name), std::ios::binary);
    if (!out) throw DataError("cannot write " + ctx.path(name));
    for (std::size_t i : idx) out << i << "\n";
  };
  write_idx("split_train.idx", sp.train_idx);
  write_idx("split_valid.idx", sp.valid_idx);
  write_idx("split_test.idx", sp.test_idx);

  std::ofstream meta(ctx.path("dataset.meta"), std::ios::binary);
  meta << "records\t" << data.size() << "\n"
       << "positives\t" << data.positive_count() << "\n"
       << "users\t" << data.distinct_users().size() << "\n"
       << "items\t" << data.distinct_items().size() << "\n"
       << "train\t" << sp.train.size() << "\n"
       << "valid\t" << sp.valid.size() << "\n"
       << "test\t" << sp.test.size() << "\n"
       << "ratings_hash\t" << to_hex(file_content_hash(ctx.cfg.str("dataset.ratings"))) << "\n";
  meta.close();

  ctx.split_.reset();  // reload from the fresh manifest on next use
  return finish_stage(ctx, "ingest", ih, artifacts);
}

StageResult stage_mine(Context& ctx) {
  ensure_stage("ingest", ctx);
  const std::vector<std::string> artifacts = {"rules_mined.tsv"};
  std::uint64_t ih = input_hash_mine(ctx);
  if (stage_fresh(ctx, "mine", ih, artifacts)) return {artifacts, true};

  MineConfig mc;
  mc.max_len = static_cast<int>(ctx.cfg.integer("mine.max_len"));
  mc.pair_cap = static_cast<std::uint64_t>(ctx.cfg.integer("mine.pair_cap"));
  mc.seed = hash_combine(ctx.cfg.seed(), 0x6d696e65ULL);
  mc.threads = ctx.cfg.threads();
  std::vector<Rule> rules = mine_rules(ctx.graph(), mc);

  std::vector<ScoredRule> out;
  out.reserve(rules.size());
  for (auto& r : rules) out.push_back({std::move(r), {0.0, RuleStrategy::mined, false}});
  save_rules(ctx.path("rules_mined.tsv"), ctx.graph().graph(), out);
  std::cerr << "mine: " << out.size() << " candidate rules\n";
  return finish_stage(ctx, "mine", ih, artifacts);
}

StageResult stage_embed(Context& ctx) {
  ensure_stage("ingest", ctx);
  const std::vector<std::string> artifacts = {"embeddings.bin"};
  std::uint64_t ih = input_hash_embed(ctx);
  if (stage_fresh(ctx, "embed", ih, artifacts)) return {artifacts, true};

  KgeConfig kc;
  kc.kind = resolved_kge_kind(ctx.cfg);
  kc.dim = static_cast<int>(ctx.cfg.integer("kge.dim"));
  kc.negatives = static_cast<int>(ctx.cfg.integer("kge.negatives"));
  kc.margin = ctx.cfg.real("kge.margin");
  kc.lr = ctx.cfg.real("kge.lr");
  kc.steps = static_cast<int>(ctx.cfg.integer("kge.steps"));
  kc.batch = static_cast<int>(ctx.cfg.integer("kge.batch"));
  kc.adv_temperature = ctx.cfg.real("kge.adv_temperature");
  kc.seed = hash_combine(ctx.cfg.seed(), 0x656d626564ULL);

  KgeTrainStats stats;
  EmbeddingModel model = train_embeddings(ctx.graph().graph(), kc, &stats);
  save_embeddings(ctx.path("embeddings.bin"), model);
  std::cerr << "embed: loss " << stats.first_decile_loss << " -> " << stats.last_decile_loss
            << " over " << kc.steps << " steps\n";
  return finish_stage(ctx, "embed", ih, artifacts);
}

StageResult stage_score_rules(Context& ctx) {
  ensure_stage("mine", ctx);
  RuleStrategy strategy = strategy_from_name(ctx.cfg.str("rules.strategy"));
  if (strategy != RuleStrategy::cwa) ensure_stage("embed", ctx);

  const std::vector<std::string> artifacts = {"rules_scored.tsv"};
  std::uint64_t ih = input_hash_score(ctx);
  if (stage_fresh(ctx, "score-rules", ih, artifacts)) return {artifacts, true};

  const AugmentedGraph& g = ctx.graph();
  std::vector<ScoredRule> mined = load_rules(ctx.path("rules_mined.tsv"), g.graph());

  std::vector<Rule> rules;
  std::vector<RuleScore> scores;
  if (strategy == RuleStrategy::cwa) {
    CwaOptions opt;
    opt.grounding_cap = static_cast<std::uint64_t>(ctx.cfg.integer("mine.grounding_cap"));
    for (const auto& sr : mined) {
      auto score = cwa_confidence(g.graph(), g.interacts(), sr.rule, opt);
      if (!score) {
        std::cerr << "score-rules: dropping rule with no body grounding\n";
        continue;
      }
      rules.push_back(sr.rule);
      scores.push_back(*score);
    }
  } else {
    EmbeddingModel model = load_embeddings(ctx.path("embeddings.bin"));
    if (model.graph_hash != g.graph().content_hash())
      throw DataError("embeddings.bin was trained on a different graph (rerun stage embed)");
    for (const auto& sr : mined) {
      rules.push_back(sr.rule);
      scores.push_back(composition_confidence(model, sr.rule, g.interacts()));
    }
  }

  std::size_t top_l = static_cast<std::size_t>(ctx.cfg.integer("rules.top_l"));
  std::vector<ScoredRule> ranked = rank_rules(rules, scores, top_l);
  save_rules(ctx.path("rules_scored.tsv"), g.graph(), ranked);
  std::cerr << "score-rules: kept " << ranked.size() << " of " << mined.size() << " rules\n";
  return finish_stage(ctx, "score-rules", ih, artifacts);
}

std::vector<LabeledPair> training_pairs(Context& ctx, std::uint64_t neg_seed) {
  InteractionSet ctr = build_ctr_set(ctx.used_train(), ctx.universe(), neg_seed);
  return resolve_pairs(ctx.graph(), ctr, /*drop_unknown_users=*/true);
}

StageResult stage_pretrain(Context& ctx) {
  ensure_stage("score-rules", ctx);
  const std::vector<std::string> artifacts = {"rule_weights.tsv", "features.bin"};
  std::uint64_t ih = input_hash_pretrain(ctx);
  if (stage_fresh(ctx, "pretrain", ih, artifacts)) return {artifacts, true};

  const AugmentedGraph& g = ctx.graph();
  std::vector<ScoredRule> rules = load_rules(ctx.path("rules_scored.tsv"), g.graph());
  if (rules.empty()) throw DataError("rules_scored.tsv is empty; nothing to pre-train");

  auto pairs = training_pairs(ctx, hash_combine(ctx.cfg.seed(), 0x706e6567ULL));  // "pneg"
  FeatureMatrix features =
      extract_features(g.graph(), g.interacts(), pairs, rules, ctx.cfg.threads());
  save_features(ctx.path("features.bin"), features, rule_order_checksum(rules));

  PretrainConfig pc;
  pc.lambda = ctx.cfg.real("pretrain.lambda");
  pc.lr = ctx.cfg.real("pretrain.lr");
  pc.batch = static_cast<int>(ctx.cfg.integer("pretrain.batch"));
  pc.max_epochs = static_cast<int>(ctx.cfg.integer("pretrain.max_epochs"));
  pc.seed = hash_combine(ctx.cfg.seed(), 0x707472ULL);  // "ptr"
  RuleWeights w = pretrain_weights(features, pc);

  std::ofstream out(ctx.path("rule_weights.tsv"), std::ios::binary);
  out << "# rule_checksum\t" << to_hex(rule_order_checksum(rules)) << "\n";
  out << "# epochs\t" << w.epochs_run << "\tfinal_loss\t" << format_double(w.final_loss) << "\n";
  for (double v : w.w) out << format_double(v) << "\n";
  out.close();
  std::cerr << "pretrain: " << w.epochs_run << " epochs, loss " << w.final_loss << "\n";
  return finish_stage(ctx, "pretrain", ih, artifacts);
}

std::vector<double> load_rule_weights(const std::string& path, std::uint64_t expected_checksum) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open rule weights: " + path);
  std::vector<double> w;
  std::string line;
  bool checksum_ok = false;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      auto fields = split(std::string(t), '\t');
      if (fields.size() >= 2 && fields[0] == "# rule_checksum")
        checksum_ok = std::stoull(fields[1], nullptr, 16) == expected_checksum;
      continue;
    }
    w.push_back(std::strtod(std::string(t).c_str(), nullptr));
  }
  if (!checksum_ok)
    throw DataError("rule_weights.tsv was trained under a different rule order (rerun pretrain)");
  return w;
}

StageResult stage_train(Context& ctx) {
  ensure_stage("score-rules", ctx);
  if (ctx.cfg.flag("pretrain.enabled")) ensure_stage("pretrain", ctx);

  const std::vector<std::string> artifacts = {"model.bin"};
  std::uint64_t ih = input_hash_train(ctx);
  if (stage_fresh(ctx, "train", ih, artifacts)) return {artifacts, true};

  const AugmentedGraph& g = ctx.graph();
  std::vector<ScoredRule> scored = load_rules(ctx.path("rules_scored.tsv"), g.graph());
  if (scored.empty()) throw DataError("rules_scored.tsv is empty; cannot train");
  std::vector<Rule> rules;
  for (const auto& sr : scored) rules.push_back(sr.rule);

  std::optional<std::vector<double>> w_init;
  if (ctx.cfg.flag("pretrain.enabled"))
    w_init = load_rule_weights(ctx.path("rule_weights.tsv"), rule_order_checksum(scored));

  auto train_set = training_pairs(ctx, hash_combine(ctx.cfg.seed(), 0x746e6567ULL));  // "tneg"
  InteractionSet valid_ctr = build_ctr_set(ctx.dataset_split().valid, ctx.universe(),
                                           hash_combine(ctx.cfg.seed(), 0x766e6567ULL));
  auto valid_set = resolve_pairs(g, valid_ctr, /*drop_unknown_users=*/true);

  TrainConfig tc;
  tc.lr = ctx.cfg.real("model.lr");
  tc.batch = static_cast<int>(ctx.cfg.integer("model.batch"));
  tc.mu = ctx.cfg.real("model.mu");
  tc.max_epochs = static_cast<int>(ctx.cfg.integer("model.max_epochs"));
  tc.patience = static_cast<int>(ctx.cfg.integer("model.patience"));
  tc.dim = static_cast<int>(ctx.cfg.integer("model.dim"));
  tc.fanout = static_cast<int>(ctx.cfg.integer("model.fanout"));
  tc.seed = hash_combine(ctx.cfg.seed(), 0x747261696eULL);  // "train"
  tc.mask_target_edge = ctx.cfg.flag("model.mask_target_edge");
  tc.threads = ctx.cfg.threads();

  TrainResult result =
      train_model(g, train_set, valid_set, rules, w_init ? &*w_init : nullptr, tc);
  result.params.master_seed = ctx.cfg.seed();
  save_model(ctx.path("model.bin"), result.params);
  std::cerr << "train: best epoch " << result.best_epoch << ", validation AUC "
            << result.best_val_auc << "\n";
  return finish_stage(ctx, "train", ih, artifacts);
}

std::string report_preamble(Context& ctx, const char* kind) {
  std::ostringstream out;
  out << "# rgrec " << kind << " report\n";
  for (const auto& [k, v] : ctx.cfg.values()) out << "# config " << k << " = " << v << "\n";
  out << "# input ratings = " << to_hex(file_content_hash(ctx.cfg.str("dataset.ratings"))) << "\n";
  out << "# input kg = " << to_hex(file_content_hash(ctx.cfg.str("dataset.kg"))) << "\n";
  return out.str();
}

std::vector<std::pair<std::string, double>> parse_report_means(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report: " + path);
  std::vector<std::pair<std::string, double>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto fields = split(line, '\t');
    if (fields.size() == 3) out.emplace_back(fields[0], std::strtod(fields[1].c_str(), nullptr));
  }
  return out;
}

StageResult stage_evaluate(Context& ctx) {
  const std::vector<std::string> artifacts = {"report.txt", "report.tsv"};

  const int runs = static_cast<int>(ctx.cfg.integer("eval.runs"));
  if (runs > 1) {
    // full-pipeline repetitions: each run gets its own workspace and a
    // derived master seed (split and initialization both re-randomized)
    std::vector<std::vector<std::pair<std::string, double>>> per_run;
    for (int r = 0; r < runs; ++r) {
      PipelineConfig child = ctx.cfg;
      child.set("workspace", ctx.ws + "/runs/r" + std::to_string(r));
      child.set("eval.runs", "1");
      std::uint64_t child_seed =
          hash_combine(ctx.cfg.seed(), 0x72756eULL, static_cast<std::uint64_t>(r)) & 0x7fffffffffffffffULL;
      child.set("seed", std::to_string(child_seed));
      run_stage("evaluate", child);
      per_run.push_back(parse_report_means(ctx.ws + "/runs/r" + std::to_string(r) + "/report.tsv"));
    }
    std::vector<std::pair<std::string, MetricStats>> agg;
    for (const auto& [name, _] : per_run[0]) {
      std::vector<double> values;
      for (const auto& run : per_run)
        for (const auto& [n, v] : run)
          if (n == name) values.push_back(v);
      agg.emplace_back(name, metric_stats(std::move(values)));
    }
    EvalReport report;
    report.metrics = std::move(agg);

    std::string preamble = report_preamble(ctx, "multi-run evaluation");
    std::ofstream tsv(ctx.path("report.tsv"), std::ios::binary);
    tsv << preamble << "# runs = " << runs << "\n" << report_machine_format(report);
    tsv.close();
    std::ofstream txt(ctx.path("report.txt"), std::ios::binary);
    txt << preamble << "# runs = " << runs << "\n" << report_table(report);
    txt.close();
    std::cout << report_table(report);
    // multi-run reports aggregate their children; no stamp of their own
    return {artifacts, false};
  }

  ensure_stage("train", ctx);
  std::uint64_t ih = input_hash_evaluate(ctx);
  if (stage_fresh(ctx, "evaluate", ih, artifacts)) return {artifacts, true};

  const AugmentedGraph& g = ctx.graph();
  ModelParams params = load_model(ctx.path("model.bin"));
  if (params.graph_hash != g.graph().content_hash())
    throw DataError("model.bin was trained on a different graph (rerun stage train)");

  EvalConfig ec;
  ec.repeats = static_cast<int>(ctx.cfg.integer("eval.repeats"));
  ec.ks = parse_ks(ctx.cfg.str("eval.ks"));
  ec.topk_negatives = static_cast<int>(ctx.cfg.integer("eval.topk_negatives"));
  ec.f1_threshold = ctx.cfg.real("eval.f1_threshold");
  ec.fanout = static_cast<int>(ctx.cfg.integer("model.fanout"));
  ec.seed = hash_combine(ctx.cfg.seed(), 0x6576ULL);  // "ev"
  ec.threads = ctx.cfg.threads();

  EvalReport report = evaluate_model(g, params, ctx.dataset_split().test, ctx.universe(), ec);

  std::string preamble = report_preamble(ctx, "evaluation");
  std::ostringstream extra;
  extra << "# input model = " << to_hex(file_content_hash(ctx.path("model.bin"))) << "\n"
        << "# ctr_records = " << report.ctr_records << "\n"
        << "# topk_positives = " << report.topk_positives << "\n"
        << "# dropped_records = " << report.dropped_records << "\n";
  std::ofstream tsv(ctx.path("report.tsv"), std::ios::binary);
  tsv << preamble << extra.str() << report_machine_format(report);
  tsv.close();
  std::ofstream txt(ctx.path("report.txt"), std::ios::binary);
  txt << preamble << extra.str() << report_table(report);
  txt.close();
  std::cout << report_table(report);
  return finish_stage(ctx, "evaluate", ih, artifacts);
}

StageResult run_stage_inner(const std::string& stage, Context& ctx) {
  if (stage == "ingest") return stage_ingest(ctx);
  if (stage == "mine") return stage_mine(ctx);
  if (stage == "embed") return stage_embed(ctx);
  if (stage == "score-rules") return stage_score_rules(ctx);
  if (stage == "pretrain") return stage_pretrain(ctx);
  if (stage == "train") return stage_train(ctx);
  if (stage == "evaluate") return stage_evaluate(ctx);
  throw ConfigError("unknown stage: " + stage);
}

}  // namespace

StageResult run_stage(const std::string& stage, const PipelineConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.workspace());
  Context ctx(cfg);
  return run_stage_inner(stage, ctx);
}

std::string run_ablation(const std::string& mode, const PipelineConfig& base) {
  base.validate();
  struct Setting {
    std::string label;
    std::string key;
    std::string value;
  };
  std::vector<Setting> settings;
  if (mode == "rule-length") {
    for (const char* v : {"2", "3", "4"}) settings.push_back({std::string("I=") + v, "mine.max_len", v});
  } else if (mode == "rule-count") {
    for (const char* v : {"10", "30", "50", "0"})
      settings.push_back({std::string(v) == "0" ? "L=all" : "L=" + std::string(v), "rules.top_l", v});
  } else if (mode == "filter-strategy") {
    for (const char* v : {"cwa", "rotate", "transe"})
      settings.push_back({std::string("strategy=") + v, "rules.strategy", v});
  } else if (mode == "no-pretrain") {
    settings.push_back({"pretrain=on", "pretrain.enabled", "true"});
    settings.push_back({"pretrain=off", "pretrain.enabled", "false"});
  } else if (mode == "cold-start") {
    for (const char* v : {"0.2", "0.4", "0.6"})
      settings.push_back({std::string("fraction=") + v, "split.fraction", v});
  } else {
    throw ConfigError("unknown ablation mode: " + mode);
  }

  std::vector<std::string> metric_names;
  std::vector<std::vector<double>> rows;
  for (const auto& s : settings) {
    PipelineConfig child = base;
    child.set(s.key, s.value);
    child.set("workspace", base.workspace() + "/ablation/" + mode + "/" + s.label);
    run_stage("evaluate", child);
    auto means = parse_report_means(base.workspace() + "/ablation/" + mode + "/" + s.label +
                                    "/report.tsv");
    if (metric_names.empty())
      for (const auto& [n, _] : means) metric_names.push_back(n);
    std::vector<double> row;
    for (const auto& n : metric_names) {
      double v = 0.0;
      for (const auto& [mn, mv] : means)
        if (mn == n) v = mv;
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }

  std::ostringstream out;
  out << "setting";
  for (const auto& n : metric_names) out << '\t' << n;
  out << '\n';
  for (std::size_t i = 0; i < settings.size(); ++i) {
    out << settings[i].label;
    for (double v : rows[i]) out << '\t' << format_double(v);
    out << '\n';
  }
  std::string table = out.str();
  std::ofstream f(base.workspace() + "/ablation_" + mode + ".tsv", std::ios::binary);
  f << table;
  return table;
}

}  // namespace rgrec
